#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "tuplenet/tensor.hpp"

namespace testutil {

using namespace tuplenet;

template <typename T>
BasicTensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
    BasicTensor<T> t(std::move(shape));
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& v : t.data()) v = static_cast<T>(u(rng));
    return t;
}

// Largest relative error between an analytic gradient and central differences
// of `f` around the current contents of x (step h). The denominator is
// max(|analytic|, |numeric|, floor), so components smaller than `floor` are
// held to an absolute error of tolerance * floor.
inline double fd_max_rel_error(TensorD& x, const TensorD& analytic, const std::function<double()>& f,
                               double h = 1e-3, double floor = 1e-3) {
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + h;
        const double up = f();
        x[i] = saved - h;
        const double down = f();
        x[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic[i];
        const double denom = std::max({std::abs(a), std::abs(numeric), floor});
        worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    return worst;
}

// Sum of r .* y, the scalar used to turn a tensor-valued op into a loss.
inline double project(const TensorD& y, const TensorD& r) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
    return s;
}

}  // namespace testutil
