#include "tuplenet/hydra.hpp"

#include <algorithm>

namespace tuplenet {

HydraStrategy hydra_strategy_from_string(const std::string& s) {
    if (s == "masked_all") return HydraStrategy::masked_all;
    if (s == "per_instance") return HydraStrategy::per_instance;
    throw InvalidArgument("unknown hydra strategy '" + s + "' (expected masked_all or per_instance)");
}

const char* to_string(HydraStrategy s) { return s == HydraStrategy::masked_all ? "masked_all" : "per_instance"; }

HydraLayer::HydraLayer(const std::map<std::string, ConvFilterBank>& pathways, HydraStrategy strategy)
    : strategy_(strategy) {
    if (pathways.empty()) throw InvalidArgument("hydra layer needs at least one pathway");
    const auto& first = pathways.begin()->second;
    shape_ = first.weights.shape();
    activation_ = first.activation;
    stride_ = first.stride;
    for (const auto& [name, bank] : pathways) {
        if (bank.weights.shape() != shape_ || bank.activation != activation_ || bank.stride != stride_)
            throw ShapeError("hydra pathway '" + name + "' differs in shape or activation from the others");
        names_.push_back(name);
        pathways_.emplace_back("hydra." + name, bank.weights);
    }
}

std::vector<std::string> HydraLayer::selectors() const { return names_; }

bool HydraLayer::has(std::string_view selector) const {
    return std::binary_search(names_.begin(), names_.end(), selector);
}

std::size_t HydraLayer::slot(std::string_view selector) const {
    auto it = std::lower_bound(names_.begin(), names_.end(), selector);
    if (it == names_.end() || *it != selector)
        throw InvalidArgument("hydra layer has no pathway for selector '" + std::string(selector) + "'");
    return static_cast<std::size_t>(it - names_.begin());
}

void HydraLayer::check_selectors(std::span<const std::string> selectors) const {
    for (const auto& s : selectors) (void)slot(s);
}

ConvFilterBank HydraLayer::bank(std::string_view selector) const {
    return {pathways_[slot(selector)].value, activation_, stride_};
}

Parameter& HydraLayer::pathway(std::string_view selector) { return pathways_[slot(selector)]; }
const Parameter& HydraLayer::pathway(std::string_view selector) const { return pathways_[slot(selector)]; }

std::vector<Parameter*> HydraLayer::parameters() {
    std::vector<Parameter*> out;
    for (auto& p : pathways_) out.push_back(&p);
    return out;
}

void HydraLayer::zero_grad() {
    for (auto& p : pathways_) p.zero_grad();
}

void HydraLayer::set_frozen(bool frozen) {
    for (auto& p : pathways_) p.frozen = frozen;
}

namespace {

Tensor run_pathway(bool deconv, const Tensor& x, const Tensor& w, Activation act, std::size_t stride) {
    return deconv ? deconv_time_tied_forward(x, w, act) : conv_time_forward(x, w, act, stride);
}

std::vector<Tensor> route(const HydraLayer& self, bool deconv, std::span<const Tensor> inputs,
                          std::span<const std::string> selectors, HydraLayer::Tape* tape,
                          const std::vector<std::string>& names, const std::vector<Parameter>& pathways,
                          Activation act, std::size_t stride) {
    if (inputs.size() != selectors.size()) throw ShapeError("hydra batch: inputs and selectors differ in length");
    if (tape) {
        *tape = HydraLayer::Tape{};
        tape->deconv = deconv;
        tape->selectors.assign(selectors.begin(), selectors.end());
    }
    std::vector<Tensor> out;
    out.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto sel = static_cast<std::size_t>(
            std::lower_bound(names.begin(), names.end(), selectors[i]) - names.begin());
        std::vector<Tensor> evaluated_out;
        std::vector<std::size_t> evaluated;
        if (self.strategy() == HydraStrategy::per_instance) {
            evaluated_out.push_back(run_pathway(deconv, inputs[i], pathways[sel].value, act, stride));
            evaluated.push_back(sel);
            out.push_back(evaluated_out.back());
        } else {
            Tensor combined;
            for (std::size_t p = 0; p < pathways.size(); ++p) {
                Tensor y = run_pathway(deconv, inputs[i], pathways[p].value, act, stride);
                const float mask = p == sel ? 1.0f : 0.0f;
                if (combined.empty()) combined = Tensor(y.shape());
                for (std::size_t e = 0; e < y.size(); ++e) combined[e] += mask * y[e];
                evaluated_out.push_back(std::move(y));
                evaluated.push_back(p);
            }
            out.push_back(std::move(combined));
        }
        if (tape) {
            tape->inputs.push_back(inputs[i]);
            tape->outputs.push_back(std::move(evaluated_out));
            tape->evaluated.push_back(std::move(evaluated));
            tape->selected.push_back(sel);
        }
    }
    if (tape) tape->valid = true;
    return out;
}

}  // namespace

std::vector<Tensor> HydraLayer::conv_forward(std::span<const Tensor> inputs, std::span<const std::string> selectors,
                                             Tape* tape) const {
    check_selectors(selectors);
    return route(*this, false, inputs, selectors, tape, names_, pathways_, activation_, stride_);
}

std::vector<Tensor> HydraLayer::deconv_forward(std::span<const Tensor> codes, std::span<const std::string> selectors,
                                               Tape* tape) const {
    check_selectors(selectors);
    return route(*this, true, codes, selectors, tape, names_, pathways_, activation_, stride_);
}

std::vector<Tensor> HydraLayer::backward(const Tape& tape, std::span<const Tensor> grad_outputs, bool need_input_grad) {
    if (!tape.valid) throw StateError("hydra layer: backward called before forward");
    if (grad_outputs.size() != tape.inputs.size()) throw ShapeError("hydra backward: gradient batch size mismatch");
    std::vector<Tensor> grad_in;
    if (need_input_grad) grad_in.reserve(tape.inputs.size());
    for (std::size_t i = 0; i < tape.inputs.size(); ++i) {
        Tensor gi;
        for (std::size_t e = 0; e < tape.evaluated[i].size(); ++e) {
            const std::size_t p = tape.evaluated[i][e];
            Parameter& param = pathways_[p];
            const bool selected = p == tape.selected[i];
            Tensor g = grad_outputs[i];
            if (!selected)
                for (auto& v : g.data()) v *= 0.0f;
            Tensor* gw = param.frozen ? nullptr : &param.grad;
            if (selected && gw) param.touched = true;
            Tensor contrib =
                tape.deconv
                    ? deconv_time_tied_backward(tape.inputs[i], param.value, activation_, tape.outputs[i][e], g, gw)
                    : conv_time_backward(tape.inputs[i], param.value, activation_, stride_, tape.outputs[i][e], g, gw,
                                         need_input_grad);
            if (need_input_grad || tape.deconv) {
                if (gi.empty()) gi = Tensor(contrib.shape());
                for (std::size_t k = 0; k < contrib.size(); ++k) gi[k] += contrib[k];
            }
        }
        if (need_input_grad) grad_in.push_back(std::move(gi));
    }
    return grad_in;
}

std::vector<Tensor> hydra_forward(const HydraLayer& layer, std::span<const Tensor> inputs,
                                  std::span<const std::string> selectors) {
    return layer.conv_forward(inputs, selectors, nullptr);
}

// ---------------------------------------------------------------------------

HydraConvLayer::HydraConvLayer(HydraLayer layer, bool frozen) : layer_(std::move(layer)) { layer_.set_frozen(frozen); }

Tensor HydraConvLayer::forward(const Tensor& input, const ForwardContext& ctx) {
    const std::string sel(ctx.selector);
    auto out = layer_.conv_forward(std::span<const Tensor>(&input, 1), std::span<const std::string>(&sel, 1), &tape_);
    return std::move(out.front());
}

Tensor HydraConvLayer::backward(const Tensor& grad_output, bool need_input_grad) {
    auto g = layer_.backward(tape_, std::span<const Tensor>(&grad_output, 1), need_input_grad);
    return need_input_grad ? std::move(g.front()) : Tensor{};
}

std::unique_ptr<Layer> HydraConvLayer::clone() const {
    auto l = std::make_unique<HydraConvLayer>(*this);
    l->tape_ = {};
    return l;
}

nlohmann::json HydraConvLayer::describe() const {
    bool frozen = true;
    for (auto* p : const_cast<HydraLayer&>(layer_).parameters()) frozen = frozen && p->frozen;
    return {{"type", "hydra_conv"},
            {"filters", layer_.bank_shape()[0]},
            {"width", layer_.bank_shape()[1]},
            {"channels", layer_.bank_shape()[2]},
            {"stride", layer_.bank(layer_.selectors().front()).stride},
            {"activation", to_string(layer_.activation())},
            {"strategy", to_string(layer_.strategy())},
            {"selectors", layer_.selectors()},
            {"frozen", frozen}};
}

Shape HydraConvLayer::output_shape(const Shape& input) const {
    const auto& s = layer_.bank_shape();
    const auto stride = layer_.bank(layer_.selectors().front()).stride;
    if (input.size() != 2 || input[0] != s[2] || input[1] < s[1])
        throw ShapeError("hydra conv layer cannot take input " + shape_str(input));
    return {s[0], conv_output_length(input[1], s[1], stride)};
}

}  // namespace tuplenet
