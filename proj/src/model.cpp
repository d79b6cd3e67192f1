#include "tuplenet/model.hpp"

#include <cmath>

namespace tuplenet {

ConvFilterBank::ConvFilterBank(Tensor w, Activation act, std::size_t s)
    : weights(std::move(w)), activation(act), stride(s) {
    if (weights.rank() != 3 || weights.dim(0) == 0 || weights.dim(1) == 0 || weights.dim(2) == 0)
        throw ShapeError("filter bank weights must be a non-empty [k x w x c] tensor, got " +
                         shape_str(weights.shape()));
    if (stride == 0) throw InvalidArgument("filter bank stride must be >= 1");
}

ConvFilterBank ConvFilterBank::random(std::size_t filters, std::size_t width, std::size_t channels, Activation act,
                                      std::uint64_t seed, double scale, std::size_t stride) {
    if (scale <= 0.0) scale = 1.0 / std::sqrt(static_cast<double>(width * channels));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    Tensor w({filters, width, channels});
    for (auto& v : w.data()) v = static_cast<float>(u(rng));
    return ConvFilterBank(std::move(w), act, stride);
}

Tensor conv_time_forward(const Tensor& input, const ConvFilterBank& bank) {
    return conv_time_forward(input, bank.weights, bank.activation, bank.stride);
}

Tensor deconv_time_tied_forward(const Tensor& code, const ConvFilterBank& bank) {
    return deconv_time_tied_forward(code, bank.weights, bank.activation);
}

// ---------------------------------------------------------------------------

ConvLayer::ConvLayer(ConvFilterBank bank, bool frozen)
    : weights_("conv.weights", std::move(bank.weights)), activation_(bank.activation), stride_(bank.stride) {
    weights_.frozen = frozen;
}

Tensor ConvLayer::forward(const Tensor& input, const ForwardContext&) {
    input_ = input;
    output_ = conv_time_forward(input, weights_.value, activation_, stride_);
    has_cache_ = true;
    return output_;
}

Tensor ConvLayer::backward(const Tensor& grad_output, bool need_input_grad) {
    if (!has_cache_) throw StateError("conv layer: backward called before forward");
    Tensor* gw = weights_.frozen ? nullptr : &weights_.grad;
    if (gw) weights_.touched = true;
    return conv_time_backward(input_, weights_.value, activation_, stride_, output_, grad_output, gw, need_input_grad);
}

std::unique_ptr<Layer> ConvLayer::clone() const {
    auto l = std::make_unique<ConvLayer>(*this);
    l->has_cache_ = false;
    l->input_ = {};
    l->output_ = {};
    return l;
}

nlohmann::json ConvLayer::describe() const {
    return {{"type", "conv"},
            {"filters", weights_.value.dim(0)},
            {"width", weights_.value.dim(1)},
            {"channels", weights_.value.dim(2)},
            {"stride", stride_},
            {"activation", to_string(activation_)},
            {"frozen", weights_.frozen}};
}

Shape ConvLayer::output_shape(const Shape& input) const {
    if (input.size() != 2 || input[0] != weights_.value.dim(2) || input[1] < weights_.value.dim(1))
        throw ShapeError("conv layer cannot take input " + shape_str(input));
    return {weights_.value.dim(0), conv_output_length(input[1], weights_.value.dim(1), stride_)};
}

// ---------------------------------------------------------------------------

DropoutLayer::DropoutLayer(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {
    if (!(rate >= 0.0 && rate < 1.0)) throw InvalidArgument("dropout rate must lie in [0, 1)");
}

Tensor DropoutLayer::forward(const Tensor& input, const ForwardContext& ctx) {
    auto r = dropout_apply(input, rate_, rng_(), ctx.training);
    mask_ = std::move(r.mask);
    has_cache_ = true;
    return std::move(r.output);
}

Tensor DropoutLayer::backward(const Tensor& grad_output, bool) {
    if (!has_cache_) throw StateError("dropout layer: backward called before forward");
    return dropout_backward(mask_, grad_output);
}

std::unique_ptr<Layer> DropoutLayer::clone() const {
    auto l = std::make_unique<DropoutLayer>(*this);
    l->has_cache_ = false;
    l->mask_ = {};
    return l;
}

nlohmann::json DropoutLayer::describe() const { return {{"type", "dropout"}, {"rate", rate_}}; }

// ---------------------------------------------------------------------------

OutputLayer::OutputLayer(std::size_t inputs, std::size_t classes, std::uint64_t seed)
    : weights_("output.weights", Tensor({inputs, classes})), biases_("output.biases", Tensor({classes})) {
    if (inputs == 0 || classes < 2) throw InvalidArgument("output layer needs >= 1 input and >= 2 classes");
    std::mt19937_64 rng(seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(inputs));
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& v : weights_.value.data()) v = static_cast<float>(u(rng));
}

OutputLayer::OutputLayer(Tensor weights, Tensor biases)
    : weights_("output.weights", std::move(weights)), biases_("output.biases", std::move(biases)) {
    if (weights_.value.rank() != 2 || biases_.value.rank() != 1 || weights_.value.dim(1) != biases_.value.dim(0))
        throw ShapeError("output layer weights/biases shapes are inconsistent");
}

Tensor OutputLayer::forward(const Tensor& input, const ForwardContext&) {
    features_ = input;
    has_cache_ = true;
    return hinge_output_forward(input, weights_.value, biases_.value);
}

Tensor OutputLayer::backward(const Tensor& grad_output, bool) {
    if (!has_cache_) throw StateError("output layer: backward called before forward");
    weights_.touched = biases_.touched = true;
    return hinge_output_backward(features_, weights_.value, grad_output, &weights_.grad, &biases_.grad);
}

std::unique_ptr<Layer> OutputLayer::clone() const {
    auto l = std::make_unique<OutputLayer>(*this);
    l->has_cache_ = false;
    l->features_ = {};
    return l;
}

nlohmann::json OutputLayer::describe() const {
    return {{"type", "output"}, {"inputs", weights_.value.dim(0)}, {"classes", weights_.value.dim(1)}};
}

Shape OutputLayer::output_shape(const Shape& input) const {
    if (shape_numel(input) != weights_.value.dim(0))
        throw ShapeError("output layer expects " + std::to_string(weights_.value.dim(0)) + " features, got " +
                         shape_str(input));
    return {weights_.value.dim(1)};
}

// ---------------------------------------------------------------------------

Model::Model(const Model& other) {
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Model& Model::operator=(const Model& other) {
    if (this != &other) {
        Model tmp(other);
        *this = std::move(tmp);
    }
    return *this;
}

void Model::add(std::unique_ptr<Layer> layer) {
    layers_.push_back(std::move(layer));
    has_forward_ = false;
}

Tensor Model::forward(const Tensor& input, const ForwardContext& ctx) {
    return forward_range(input, 0, layers_.size(), ctx);
}

Tensor Model::forward_range(const Tensor& input, std::size_t begin, std::size_t end, const ForwardContext& ctx) {
    if (begin > end || end > layers_.size()) throw InvalidArgument("model forward: invalid layer range");
    Tensor x = input;
    for (std::size_t i = begin; i < end; ++i) x = layers_[i]->forward(x, ctx);
    last_begin_ = begin;
    last_end_ = end;
    has_forward_ = true;
    return x;
}

void Model::backward(const Tensor& grad_scores) {
    if (!has_forward_) throw StateError("model: backward called before forward");
    Tensor g = grad_scores;
    for (std::size_t i = last_end_; i-- > last_begin_;) {
        const bool need_input = i > last_begin_;
        g = layers_[i]->backward(g, need_input);
        if (!need_input) break;
    }
}

std::vector<float> Model::scores(const Tensor& input, std::string_view selector) {
    Tensor s = forward(input, ForwardContext{false, selector});
    return s.storage();
}

std::size_t Model::predict(const Tensor& input, std::string_view selector) {
    const auto s = scores(input, selector);
    return argmax(std::span<const float>(s));
}

std::vector<Parameter*> Model::parameters() {
    std::vector<Parameter*> out;
    for (auto& l : layers_)
        for (auto* p : l->parameters()) out.push_back(p);
    return out;
}

std::vector<Parameter*> Model::trainable_parameters() {
    std::vector<Parameter*> out;
    for (auto* p : parameters())
        if (!p->frozen) out.push_back(p);
    return out;
}

void Model::zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
}

std::size_t Model::frozen_prefix() const {
    std::size_t n = 0;
    for (const auto& l : layers_) {
        if (!l->deterministic()) break;
        auto params = const_cast<Layer&>(*l).parameters();
        if (params.empty()) break;
        bool all_frozen = true;
        for (auto* p : params) all_frozen = all_frozen && p->frozen;
        if (!all_frozen) break;
        ++n;
    }
    return n;
}

nlohmann::json Model::describe() const {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : layers_) layers.push_back(l->describe());
    return {{"layers", layers}};
}

}  // namespace tuplenet
