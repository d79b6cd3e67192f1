#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tuplenet/ops.hpp"
#include "tuplenet/tensor.hpp"

namespace tuplenet {

// Filter bank of a time-axis convolution: weights [k x w x c], no bias.
struct ConvFilterBank {
    Tensor weights;
    Activation activation = Activation::tanh;
    std::size_t stride = 1;

    ConvFilterBank() = default;
    ConvFilterBank(Tensor w, Activation act, std::size_t s = 1);

    [[nodiscard]] std::size_t filters() const { return weights.dim(0); }
    [[nodiscard]] std::size_t width() const { return weights.dim(1); }
    [[nodiscard]] std::size_t channels() const { return weights.dim(2); }

    // Uniform(-scale, scale) initialization; scale defaults to 1/sqrt(w*c).
    static ConvFilterBank random(std::size_t filters, std::size_t width, std::size_t channels, Activation act,
                                 std::uint64_t seed, double scale = 0.0, std::size_t stride = 1);
};

Tensor conv_time_forward(const Tensor& input, const ConvFilterBank& bank);
Tensor deconv_time_tied_forward(const Tensor& code, const ConvFilterBank& bank);

struct ForwardContext {
    bool training = false;
    std::string_view selector;  // routing metadata (subject id) for hydra layers
};

class Layer {
public:
    virtual ~Layer() = default;
    [[nodiscard]] virtual std::string kind() const = 0;
    virtual Tensor forward(const Tensor& input, const ForwardContext& ctx) = 0;
    // Accumulates parameter gradients; throws StateError without a prior forward.
    virtual Tensor backward(const Tensor& grad_output, bool need_input_grad = true) = 0;
    virtual std::vector<Parameter*> parameters() { return {}; }
    [[nodiscard]] virtual std::unique_ptr<Layer> clone() const = 0;
    [[nodiscard]] virtual nlohmann::json describe() const = 0;
    [[nodiscard]] virtual Shape output_shape(const Shape& input) const = 0;
    // Layers whose output depends only on the input (no dropout, no training state).
    [[nodiscard]] virtual bool deterministic() const { return true; }
};

class ConvLayer final : public Layer {
public:
    ConvLayer(ConvFilterBank bank, bool frozen = false);

    [[nodiscard]] std::string kind() const override { return "conv"; }
    Tensor forward(const Tensor& input, const ForwardContext& ctx) override;
    Tensor backward(const Tensor& grad_output, bool need_input_grad) override;
    std::vector<Parameter*> parameters() override { return {&weights_}; }
    [[nodiscard]] std::unique_ptr<Layer> clone() const override;
    [[nodiscard]] nlohmann::json describe() const override;
    [[nodiscard]] Shape output_shape(const Shape& input) const override;

    [[nodiscard]] ConvFilterBank bank() const { return {weights_.value, activation_, stride_}; }
    [[nodiscard]] const Parameter& weights() const { return weights_; }
    [[nodiscard]] bool frozen() const { return weights_.frozen; }

private:
    Parameter weights_;
    Activation activation_;
    std::size_t stride_;
    Tensor input_, output_;
    bool has_cache_ = false;
};

class DropoutLayer final : public Layer {
public:
    DropoutLayer(double rate, std::uint64_t seed);

    [[nodiscard]] std::string kind() const override { return "dropout"; }
    Tensor forward(const Tensor& input, const ForwardContext& ctx) override;
    Tensor backward(const Tensor& grad_output, bool need_input_grad) override;
    [[nodiscard]] std::unique_ptr<Layer> clone() const override;
    [[nodiscard]] nlohmann::json describe() const override;
    [[nodiscard]] Shape output_shape(const Shape& input) const override { return input; }
    [[nodiscard]] bool deterministic() const override { return rate_ == 0.0; }
    [[nodiscard]] double rate() const { return rate_; }
    void reseed(std::uint64_t seed) { rng_.seed(seed); }

private:
    double rate_;
    std::mt19937_64 rng_;
    Tensor mask_;
    bool has_cache_ = false;
};

// Linear scoring layer (features flattened) with biases; trained with a hinge loss.
class OutputLayer final : public Layer {
public:
    OutputLayer(std::size_t inputs, std::size_t classes, std::uint64_t seed);
    OutputLayer(Tensor weights, Tensor biases);

    [[nodiscard]] std::string kind() const override { return "output"; }
    Tensor forward(const Tensor& input, const ForwardContext& ctx) override;
    Tensor backward(const Tensor& grad_output, bool need_input_grad) override;
    std::vector<Parameter*> parameters() override { return {&weights_, &biases_}; }
    [[nodiscard]] std::unique_ptr<Layer> clone() const override;
    [[nodiscard]] nlohmann::json describe() const override;
    [[nodiscard]] Shape output_shape(const Shape& input) const override;

    [[nodiscard]] std::size_t classes() const { return biases_.value.size(); }

private:
    Parameter weights_;
    Parameter biases_;
    Tensor features_;
    bool has_cache_ = false;
};

// Ordered stack of layers. One instance is processed per forward/backward;
// parameter gradients accumulate across calls until zero_grad().
class Model {
public:
    Model() = default;
    Model(const Model& other);
    Model& operator=(const Model& other);
    Model(Model&&) noexcept = default;
    Model& operator=(Model&&) noexcept = default;

    void add(std::unique_ptr<Layer> layer);

    Tensor forward(const Tensor& input, const ForwardContext& ctx);
    // Runs layers [begin, end) only.
    Tensor forward_range(const Tensor& input, std::size_t begin, std::size_t end, const ForwardContext& ctx);
    // Backpropagates through the layers touched by the last forward call.
    void backward(const Tensor& grad_scores);

    [[nodiscard]] std::vector<float> scores(const Tensor& input, std::string_view selector = {});
    [[nodiscard]] std::size_t predict(const Tensor& input, std::string_view selector = {});

    std::vector<Parameter*> parameters();
    std::vector<Parameter*> trainable_parameters();
    void zero_grad();

    // Number of leading layers that are frozen and deterministic; their
    // output can be cached across epochs.
    [[nodiscard]] std::size_t frozen_prefix() const;

    [[nodiscard]] std::size_t size() const { return layers_.size(); }
    [[nodiscard]] Layer& layer(std::size_t i) { return *layers_.at(i); }
    [[nodiscard]] const Layer& layer(std::size_t i) const { return *layers_.at(i); }
    [[nodiscard]] nlohmann::json describe() const;

private:
    std::vector<std::unique_ptr<Layer>> layers_;
    std::size_t last_begin_ = 0, last_end_ = 0;
    bool has_forward_ = false;
};

}  // namespace tuplenet
