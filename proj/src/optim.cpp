#include "tuplenet/optim.hpp"

#include <cmath>

namespace tuplenet {

void OptimizerConfig::validate() const {
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must lie in [0, 1)");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw InvalidArgument("decay_factor must lie in (0, 1]");
    if (!(l1_coeff >= 0.0)) throw InvalidArgument("l1_coeff must be >= 0");
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw InvalidArgument("dropout_rate must lie in [0, 1)");
}

double epoch_learning_rate(const OptimizerConfig& cfg, std::size_t epoch) {
    return cfg.learning_rate * std::pow(cfg.decay_factor, static_cast<double>(epoch));
}

void sgd_step(std::span<Parameter* const> params, const OptimizerConfig& cfg, std::size_t epoch) {
    const float lr = static_cast<float>(epoch_learning_rate(cfg, epoch));
    const float mom = static_cast<float>(cfg.momentum);
    const float l1 = static_cast<float>(cfg.l1_coeff);
    for (Parameter* p : params) {
        if (p->frozen || !p->touched) continue;
        if (!p->grad.all_finite()) throw TrainingError("non-finite gradient in parameter '" + p->name + "'");
        auto w = p->value.data();
        auto g = p->grad.data();
        auto v = p->momentum.data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const float sign = w[i] > 0.0f ? 1.0f : (w[i] < 0.0f ? -1.0f : 0.0f);
            v[i] = mom * v[i] - lr * (g[i] + l1 * sign);
            w[i] += v[i];
        }
    }
}

void scale_gradients(std::span<Parameter* const> params, float factor) {
    for (Parameter* p : params)
        for (auto& g : p->grad.data()) g *= factor;
}

}  // namespace tuplenet
