#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "tuplenet/model.hpp"

namespace tuplenet {

// How a mini-batch is routed through the pathways. Both give identical
// results; they differ only in cost.
enum class HydraStrategy {
    masked_all,    // run every pathway on every instance, then mask by selector
    per_instance,  // run each instance through its selected pathway only
};

HydraStrategy hydra_strategy_from_string(const std::string& s);
const char* to_string(HydraStrategy s);

// Convolution layer with one filter bank per selector value (subject id).
// The same pathways serve as tied de-convolution, so an encoder and a decoder
// built on one HydraLayer share weights within each pathway.
class HydraLayer {
public:
    HydraLayer() = default;
    HydraLayer(const std::map<std::string, ConvFilterBank>& pathways, HydraStrategy strategy);

    // Records what backward needs for one batch.
    struct Tape {
        bool deconv = false;
        std::vector<Tensor> inputs;
        std::vector<std::string> selectors;
        // per instance: outputs of the pathways that were evaluated
        std::vector<std::vector<Tensor>> outputs;
        std::vector<std::vector<std::size_t>> evaluated;
        std::vector<std::size_t> selected;  // slot of the selected pathway per instance
        bool valid = false;
    };

    std::vector<Tensor> conv_forward(std::span<const Tensor> inputs, std::span<const std::string> selectors,
                                     Tape* tape = nullptr) const;
    std::vector<Tensor> deconv_forward(std::span<const Tensor> codes, std::span<const std::string> selectors,
                                       Tape* tape = nullptr) const;
    // Accumulates pathway gradients (marking selected pathways touched) and
    // returns input gradients when requested.
    std::vector<Tensor> backward(const Tape& tape, std::span<const Tensor> grad_outputs, bool need_input_grad = true);

    [[nodiscard]] HydraStrategy strategy() const { return strategy_; }
    void set_strategy(HydraStrategy s) { strategy_ = s; }
    [[nodiscard]] Activation activation() const { return activation_; }
    [[nodiscard]] std::vector<std::string> selectors() const;
    [[nodiscard]] bool has(std::string_view selector) const;
    [[nodiscard]] ConvFilterBank bank(std::string_view selector) const;
    [[nodiscard]] Parameter& pathway(std::string_view selector);
    [[nodiscard]] const Parameter& pathway(std::string_view selector) const;
    std::vector<Parameter*> parameters();
    void zero_grad();
    void set_frozen(bool frozen);
    [[nodiscard]] Shape bank_shape() const { return shape_; }

private:
    std::size_t slot(std::string_view selector) const;
    void check_selectors(std::span<const std::string> selectors) const;

    std::vector<std::string> names_;  // sorted
    std::vector<Parameter> pathways_;
    Activation activation_ = Activation::tanh;
    std::size_t stride_ = 1;
    Shape shape_;
    HydraStrategy strategy_ = HydraStrategy::masked_all;
};

// Stateless batch forward through the selected pathways.
std::vector<Tensor> hydra_forward(const HydraLayer& layer, std::span<const Tensor> inputs,
                                  std::span<const std::string> selectors);

// Model layer wrapper: routes each instance by ForwardContext::selector.
class HydraConvLayer final : public Layer {
public:
    HydraConvLayer(HydraLayer layer, bool frozen);

    [[nodiscard]] std::string kind() const override { return "hydra_conv"; }
    Tensor forward(const Tensor& input, const ForwardContext& ctx) override;
    Tensor backward(const Tensor& grad_output, bool need_input_grad) override;
    std::vector<Parameter*> parameters() override { return layer_.parameters(); }
    [[nodiscard]] std::unique_ptr<Layer> clone() const override;
    [[nodiscard]] nlohmann::json describe() const override;
    [[nodiscard]] Shape output_shape(const Shape& input) const override;

    [[nodiscard]] const HydraLayer& hydra() const { return layer_; }

private:
    HydraLayer layer_;
    HydraLayer::Tape tape_;
};

}  // namespace tuplenet
