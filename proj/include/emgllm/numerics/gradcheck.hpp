// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>

#include "emgllm/numerics/tensor.hpp"

namespace emgllm::numerics {

// Central differences, one coordinate at a time: (f(x + e_i*eps) - f(x - e_i*eps)) / (2*eps).
template <typename T>
Tensor<T> finite_difference_gradient(const std::function<T(const Tensor<T>&)>& f, Tensor<T> x,
                                     T eps) {
    Tensor<T> grad(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T saved = x[i];
        x[i] = saved + eps;
        const T up = f(x);
        x[i] = saved - eps;
        const T down = f(x);
        x[i] = saved;
        grad[i] = (up - down) / (T(2) * eps);
    }
    return grad;
}

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor). The floor keeps entries whose
// true derivative is ~0 from dominating through round-off.
template <typename T>
double max_relative_error(const Tensor<T>& a, const Tensor<T>& b, double floor = 1e-6) {
    if (a.shape() != b.shape()) {
        throw ContractError("max_relative_error: shapes " + shape_str(a.shape()) + " and " +
                            shape_str(b.shape()) + " differ");
    }
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = static_cast<double>(a[i]);
        const double y = static_cast<double>(b[i]);
        const double denom = std::max({std::abs(x), std::abs(y), floor});
        worst = std::max(worst, std::abs(x - y) / denom);
    }
    return worst;
}

}  // namespace emgllm::numerics
