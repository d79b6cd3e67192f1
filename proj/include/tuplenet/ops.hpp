#pragma once

// Fixed vocabulary of differentiable ops. Each forward kernel has a matching
// backward kernel; parameter gradients are accumulated (+=) so a mini-batch is
// summed by calling backward once per instance.

#include <cstdint>
#include <random>
#include <string>

#include "tuplenet/tensor.hpp"

namespace tuplenet {

enum class Activation { linear, tanh };

inline const char* to_string(Activation a) { return a == Activation::tanh ? "tanh" : "linear"; }
inline Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "linear") return Activation::linear;
    throw InvalidArgument("unknown activation '" + s + "' (expected linear or tanh)");
}

template <typename T>
inline void activate_inplace(std::span<T> v, Activation act) {
    if (act == Activation::tanh)
        for (auto& x : v) x = std::tanh(x);
}

// grad w.r.t. pre-activation, given post-activation output y.
template <typename T>
inline void activation_backward_inplace(std::span<T> grad, std::span<const T> y, Activation act) {
    if (act == Activation::tanh)
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= T{1} - y[i] * y[i];
}

inline std::size_t conv_output_length(std::size_t n, std::size_t width, std::size_t stride) {
    return (n - width) / stride + 1;
}

// ---------------------------------------------------------------------------
// Time-axis convolution. input [c x n], weights [k x w x c] -> [k x L] with
// L = (n - w) / stride + 1. No padding, no bias.
// ---------------------------------------------------------------------------
template <typename T>
void check_conv_shapes(const BasicTensor<T>& input, const BasicTensor<T>& weights, std::size_t stride) {
    if (weights.rank() != 3) throw ShapeError("conv weights must be [k x w x c], got " + shape_str(weights.shape()));
    if (input.rank() != 2) throw ShapeError("conv input must be [channels x samples], got " + shape_str(input.shape()));
    if (weights.dim(0) == 0 || weights.dim(1) == 0) throw ShapeError("conv bank needs k >= 1 and w >= 1");
    if (stride == 0) throw InvalidArgument("conv stride must be >= 1");
    if (input.dim(0) != weights.dim(2))
        throw ShapeError("conv input has " + std::to_string(input.dim(0)) + " channels, bank expects " +
                         std::to_string(weights.dim(2)));
    if (input.dim(1) < weights.dim(1))
        throw ShapeError("conv input has " + std::to_string(input.dim(1)) + " samples, shorter than filter width " +
                         std::to_string(weights.dim(1)));
}

template <typename T>
BasicTensor<T> conv_time_forward(const BasicTensor<T>& input, const BasicTensor<T>& weights, Activation act,
                                 std::size_t stride = 1) {
    check_conv_shapes(input, weights, stride);
    const std::size_t k = weights.dim(0), w = weights.dim(1), c = weights.dim(2), n = input.dim(1);
    const std::size_t len = conv_output_length(n, w, stride);
    BasicTensor<T> out({k, len});
    for (std::size_t f = 0; f < k; ++f) {
        T* o = &out(f, 0);
        for (std::size_t j = 0; j < w; ++j) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const T wv = weights(f, j, ch);
                const T* row = &input(ch, j);
                if (stride == 1) {
                    for (std::size_t t = 0; t < len; ++t) o[t] += wv * row[t];
                } else {
                    for (std::size_t t = 0; t < len; ++t) o[t] += wv * row[t * stride];
                }
            }
        }
    }
    activate_inplace(out.data(), act);
    return out;
}

// grad_output is w.r.t. the post-activation output. Accumulates into
// grad_weights; returns the gradient w.r.t. input when want_input is set.
template <typename T>
BasicTensor<T> conv_time_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights, Activation act,
                                  std::size_t stride, const BasicTensor<T>& output,
                                  const BasicTensor<T>& grad_output, BasicTensor<T>* grad_weights,
                                  bool want_input = true) {
    require_shape(grad_output.shape(), output.shape(), "conv backward grad");
    const std::size_t k = weights.dim(0), w = weights.dim(1), c = weights.dim(2);
    const std::size_t len = output.dim(1);
    BasicTensor<T> dpre = grad_output;
    activation_backward_inplace<T>(dpre.data(), output.data(), act);

    BasicTensor<T> grad_in;
    if (want_input) grad_in = BasicTensor<T>(input.shape());
    if (grad_weights) require_shape(grad_weights->shape(), weights.shape(), "conv weight grad");

    for (std::size_t f = 0; f < k; ++f) {
        const T* d = &dpre(f, 0);
        for (std::size_t j = 0; j < w; ++j) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const T* row = &input(ch, j);
                if (grad_weights) {
                    T acc{0};
                    for (std::size_t t = 0; t < len; ++t) acc += d[t] * row[t * stride];
                    (*grad_weights)(f, j, ch) += acc;
                }
                if (want_input) {
                    const T wv = weights(f, j, ch);
                    T* g = &grad_in(ch, j);
                    for (std::size_t t = 0; t < len; ++t) g[t * stride] += wv * d[t];
                }
            }
        }
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// Tied de-convolution: full transposed convolution with the encoder's weight
// tensor. code [k x m], weights [k x w x c] -> [c x (m + w - 1)].
// ---------------------------------------------------------------------------
template <typename T>
BasicTensor<T> deconv_time_tied_forward(const BasicTensor<T>& code, const BasicTensor<T>& weights, Activation act) {
    if (weights.rank() != 3) throw ShapeError("deconv weights must be [k x w x c], got " + shape_str(weights.shape()));
    if (code.rank() != 2 || code.dim(0) != weights.dim(0))
        throw ShapeError("deconv code " + shape_str(code.shape()) + " does not match bank " +
                         shape_str(weights.shape()));
    const std::size_t k = weights.dim(0), w = weights.dim(1), c = weights.dim(2), m = code.dim(1);
    BasicTensor<T> out({c, m + w - 1});
    for (std::size_t f = 0; f < k; ++f) {
        const T* src = &code(f, 0);
        for (std::size_t j = 0; j < w; ++j) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const T wv = weights(f, j, ch);
                T* o = &out(ch, j);
                for (std::size_t t = 0; t < m; ++t) o[t] += wv * src[t];
            }
        }
    }
    activate_inplace(out.data(), act);
    return out;
}

template <typename T>
BasicTensor<T> deconv_time_tied_backward(const BasicTensor<T>& code, const BasicTensor<T>& weights, Activation act,
                                         const BasicTensor<T>& output, const BasicTensor<T>& grad_output,
                                         BasicTensor<T>* grad_weights) {
    require_shape(grad_output.shape(), output.shape(), "deconv backward grad");
    const std::size_t k = weights.dim(0), w = weights.dim(1), c = weights.dim(2), m = code.dim(1);
    BasicTensor<T> dpre = grad_output;
    activation_backward_inplace<T>(dpre.data(), output.data(), act);
    BasicTensor<T> grad_code(code.shape());
    for (std::size_t f = 0; f < k; ++f) {
        const T* src = &code(f, 0);
        T* gc = &grad_code(f, 0);
        for (std::size_t j = 0; j < w; ++j) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const T wv = weights(f, j, ch);
                const T* d = &dpre(ch, j);
                T acc{0};
                for (std::size_t t = 0; t < m; ++t) {
                    acc += d[t] * src[t];
                    gc[t] += wv * d[t];
                }
                if (grad_weights) (*grad_weights)(f, j, ch) += acc;
            }
        }
    }
    return grad_code;
}

// ---------------------------------------------------------------------------
// Dropout (inverted). mask holds 0 or 1/(1-rate) per element.
// ---------------------------------------------------------------------------
template <typename T>
struct DropoutResult {
    BasicTensor<T> output;
    BasicTensor<T> mask;
};

template <typename T>
DropoutResult<T> dropout_apply(const BasicTensor<T>& input, double rate, std::uint64_t rng_seed, bool training) {
    if (!(rate >= 0.0 && rate < 1.0)) throw InvalidArgument("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return {input, BasicTensor<T>(input.shape(), T{1})};
    std::mt19937_64 rng(rng_seed);
    std::bernoulli_distribution keep(1.0 - rate);
    const T scale = static_cast<T>(1.0 / (1.0 - rate));
    DropoutResult<T> r{BasicTensor<T>(input.shape()), BasicTensor<T>(input.shape())};
    for (std::size_t i = 0; i < input.size(); ++i) {
        r.mask[i] = keep(rng) ? scale : T{0};
        r.output[i] = input[i] * r.mask[i];
    }
    return r;
}

template <typename T>
BasicTensor<T> dropout_backward(const BasicTensor<T>& mask, const BasicTensor<T>& grad_output) {
    require_shape(grad_output.shape(), mask.shape(), "dropout backward grad");
    BasicTensor<T> g = grad_output;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask[i];
    return g;
}

// ---------------------------------------------------------------------------
// Linear output layer scored with a hinge loss. features are flattened to d;
// weights [d x C]; biases [C].
// ---------------------------------------------------------------------------
template <typename T>
BasicTensor<T> hinge_output_forward(const BasicTensor<T>& features, const BasicTensor<T>& weights,
                                    const BasicTensor<T>& biases) {
    if (weights.rank() != 2 || biases.rank() != 1 || weights.dim(1) != biases.dim(0))
        throw ShapeError("output layer weights " + shape_str(weights.shape()) + " and biases " +
                         shape_str(biases.shape()) + " are inconsistent");
    if (features.size() != weights.dim(0))
        throw ShapeError("output layer expects " + std::to_string(weights.dim(0)) + " features, got " +
                         std::to_string(features.size()));
    const std::size_t d = weights.dim(0), classes = weights.dim(1);
    BasicTensor<T> scores = biases;
    for (std::size_t i = 0; i < d; ++i) {
        const T fi = features[i];
        const T* wr = &weights(i, 0);
        for (std::size_t j = 0; j < classes; ++j) scores[j] += fi * wr[j];
    }
    return scores;
}

template <typename T>
BasicTensor<T> hinge_output_backward(const BasicTensor<T>& features, const BasicTensor<T>& weights,
                                     const BasicTensor<T>& grad_scores, BasicTensor<T>* grad_weights,
                                     BasicTensor<T>* grad_biases) {
    const std::size_t d = weights.dim(0), classes = weights.dim(1);
    if (grad_scores.size() != classes) throw ShapeError("output backward: score gradient has wrong length");
    BasicTensor<T> grad_features(features.shape());
    for (std::size_t i = 0; i < d; ++i) {
        const T* wr = &weights(i, 0);
        T acc{0};
        for (std::size_t j = 0; j < classes; ++j) acc += wr[j] * grad_scores[j];
        grad_features[i] = acc;
        if (grad_weights) {
            T* gw = &(*grad_weights)(i, 0);
            for (std::size_t j = 0; j < classes; ++j) gw[j] += features[i] * grad_scores[j];
        }
    }
    if (grad_biases)
        for (std::size_t j = 0; j < classes; ++j) (*grad_biases)[j] += grad_scores[j];
    return grad_features;
}

template <typename T>
std::size_t argmax(std::span<const T> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

// ---------------------------------------------------------------------------
// Losses. Each returns the scalar and its gradient w.r.t. the first argument.
// ---------------------------------------------------------------------------
template <typename T>
struct LossGrad {
    T loss{};
    BasicTensor<T> grad;
};

// Squared hinge, one-vs-all against the target score:
//   sum_{j != target} max(0, 1 - (s_target - s_j))^2
template <typename T>
LossGrad<T> l2svm_loss(const BasicTensor<T>& scores, std::size_t target) {
    const std::size_t classes = scores.size();
    if (target >= classes)
        throw InvalidArgument("target class " + std::to_string(target) + " out of range for " +
                              std::to_string(classes) + " scores");
    LossGrad<T> r{T{0}, BasicTensor<T>(scores.shape())};
    for (std::size_t j = 0; j < classes; ++j) {
        if (j == target) continue;
        const T v = T{1} - (scores[target] - scores[j]);
        if (v > T{0}) {
            r.loss += v * v;
            r.grad[j] += T{2} * v;
            r.grad[target] -= T{2} * v;
        }
    }
    return r;
}

// -log softmax(scores)[target]
template <typename T>
LossGrad<T> softmax_nll(const BasicTensor<T>& scores, std::size_t target) {
    if (target >= scores.size()) throw InvalidArgument("softmax target out of range");
    const T mx = *std::max_element(scores.data().begin(), scores.data().end());
    T z{0};
    for (std::size_t i = 0; i < scores.size(); ++i) z += std::exp(scores[i] - mx);
    LossGrad<T> r{std::log(z) + mx - scores[target], BasicTensor<T>(scores.shape())};
    for (std::size_t i = 0; i < scores.size(); ++i) r.grad[i] = std::exp(scores[i] - mx) / z;
    r.grad[target] -= T{1};
    return r;
}

// Unsquared margin alternative for tuple scores: sum_{i>0} max(0, 1 - (s_0 - s_i)).
template <typename T>
LossGrad<T> tuple_margin_hinge(const BasicTensor<T>& scores) {
    LossGrad<T> r{T{0}, BasicTensor<T>(scores.shape())};
    for (std::size_t i = 1; i < scores.size(); ++i) {
        const T v = T{1} - (scores[0] - scores[i]);
        if (v > T{0}) {
            r.loss += v;
            r.grad[i] += T{1};
            r.grad[0] -= T{1};
        }
    }
    return r;
}

// Mean squared reconstruction error: squared Euclidean distance over
// channels, averaged over time samples. Gradient w.r.t. recon.
template <typename T>
LossGrad<T> msre_loss(const BasicTensor<T>& recon, const BasicTensor<T>& target) {
    require_shape(recon.shape(), target.shape(), "msre");
    const T n = static_cast<T>(target.rank() == 2 ? target.dim(1) : target.size());
    LossGrad<T> r{T{0}, BasicTensor<T>(recon.shape())};
    double acc = 0.0;
    for (std::size_t i = 0; i < recon.size(); ++i) {
        const T d = recon[i] - target[i];
        acc += static_cast<double>(d) * d;
        r.grad[i] = T{2} * d / n;
    }
    r.loss = static_cast<T>(acc / n);
    return r;
}

// Negative mean per-sample dot product between reconstruction and target.
template <typename T>
LossGrad<T> neg_dot_loss(const BasicTensor<T>& recon, const BasicTensor<T>& target) {
    require_shape(recon.shape(), target.shape(), "dot loss");
    const T n = static_cast<T>(target.rank() == 2 ? target.dim(1) : target.size());
    LossGrad<T> r{T{0}, BasicTensor<T>(recon.shape())};
    double acc = 0.0;
    for (std::size_t i = 0; i < recon.size(); ++i) {
        acc += static_cast<double>(recon[i]) * target[i];
        r.grad[i] = -target[i] / n;
    }
    r.loss = static_cast<T>(-acc / n);
    return r;
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
    if (a.size() != b.size()) throw ShapeError("dot product of vectors with different lengths");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
    return static_cast<T>(acc);
}

}  // namespace tuplenet
