#pragma once

#include <span>
#include <string>

#include "tuplenet/tensor.hpp"

namespace tuplenet {

// Defaults are sweep starting points.
struct OptimizerConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    double decay_factor = 0.99;  // per epoch
    double l1_coeff = 1e-5;
    std::size_t batch_size = 128;
    std::size_t max_epochs = 50;
    double dropout_rate = 0.5;

    void validate() const;
};

double epoch_learning_rate(const OptimizerConfig& cfg, std::size_t epoch);

// Momentum SGD with an L1 subgradient (sign(0) = 0):
//   v <- momentum * v - lr_e * (g + l1 * sign(w));  w <- w + v
// Frozen parameters and parameters that received no gradient in this
// mini-batch (touched == false) are left bitwise unchanged.
void sgd_step(std::span<Parameter* const> params, const OptimizerConfig& cfg, std::size_t epoch);

// Multiplies every accumulated gradient by `factor` (e.g. 1/batch).
void scale_gradients(std::span<Parameter* const> params, float factor);

}  // namespace tuplenet
