// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "emgllm/numerics/parameters.hpp"

#include <cmath>

namespace emgllm::numerics {

template <typename T>
void Parameter<T>::accumulate_into_grad() {
    if (grad.shape() != value.shape()) {
        grad = Tensor<T>(value.shape());
    }
    has_grad = true;
}

template <typename T>
int ParameterSet<T>::add(const std::string& name, Tensor<T> value, bool trainable) {
    if (index_.count(name) != 0) {
        throw ContractError("duplicate parameter name '" + name + "'");
    }
    Parameter<T> p;
    p.name = name;
    p.value = std::move(value);
    p.trainable = trainable;
    params_.push_back(std::move(p));
    const int handle = static_cast<int>(params_.size()) - 1;
    index_[name] = handle;
    return handle;
}

template <typename T>
int ParameterSet<T>::handle(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw ContractError("unknown parameter '" + name + "'");
    }
    return it->second;
}

template <typename T>
Parameter<T>& ParameterSet<T>::get(const std::string& name) {
    return params_[static_cast<std::size_t>(handle(name))];
}

template <typename T>
const Parameter<T>& ParameterSet<T>::get(const std::string& name) const {
    return params_[static_cast<std::size_t>(handle(name))];
}

template <typename T>
std::int64_t ParameterSet<T>::count(bool trainable_only) const {
    std::int64_t n = 0;
    for (const auto& p : params_) {
        if (!trainable_only || p.trainable) {
            n += static_cast<std::int64_t>(p.value.size());
        }
    }
    return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
    for (auto& p : params_) {
        if (p.has_grad) {
            p.grad.fill(T(0));
        }
        p.has_grad = false;
    }
}

template <typename T>
void ParameterSet<T>::set_trainable(bool trainable) {
    for (auto& p : params_) {
        p.trainable = trainable;
    }
}

template <typename T>
void ParameterSet<T>::set_trainable_prefix(const std::string& prefix, bool trainable) {
    for (auto& p : params_) {
        if (p.name.rfind(prefix, 0) == 0) {
            p.trainable = trainable;
        }
    }
}

template <typename T>
template <typename U>
ParameterSet<U> ParameterSet<T>::cast() const {
    ParameterSet<U> out;
    for (const auto& p : params_) {
        const int h = out.add(p.name, p.value.template cast<U>(), p.trainable);
        if (!p.adam_m.empty()) {
            out[h].adam_m = p.adam_m.template cast<U>();
            out[h].adam_v = p.adam_v.template cast<U>();
        }
    }
    out.step_count_ = step_count_;
    return out;
}

template <typename T>
void adamw_step(ParameterSet<T>& params, const AdamWConfig& config) {
    for (const auto& p : params) {
        if (p.trainable && !p.has_grad) {
            throw ContractError("adamw_step: no gradient for trainable parameter '" + p.name + "'");
        }
    }
    params.set_step_count(params.step_count() + 1);
    const double step = static_cast<double>(params.step_count());
    const double bc1 = 1.0 - std::pow(config.beta1, step);
    const double bc2 = 1.0 - std::pow(config.beta2, step);
    const T lr = static_cast<T>(config.lr);
    const T decay = static_cast<T>(1.0 - config.lr * config.weight_decay);
    const T b1 = static_cast<T>(config.beta1);
    const T b2 = static_cast<T>(config.beta2);
    const T eps = static_cast<T>(config.eps);
    const T inv_bc1 = static_cast<T>(1.0 / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    for (auto& p : params) {
        if (!p.trainable) {
            continue;
        }
        if (p.adam_m.shape() != p.value.shape()) {
            p.adam_m = Tensor<T>(p.value.shape());
            p.adam_v = Tensor<T>(p.value.shape());
        }
        T* w = p.value.data();
        const T* g = p.grad.data();
        T* m = p.adam_m.data();
        T* v = p.adam_v.data();
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            w[i] *= decay;
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            const T mhat = m[i] * inv_bc1;
            const T vhat = v[i] * inv_bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

template <typename T>
double grad_norm(const ParameterSet<T>& params) {
    double total = 0;
    for (const auto& p : params) {
        if (!p.trainable || !p.has_grad) {
            continue;
        }
        for (T g : p.grad.values()) {
            total += static_cast<double>(g) * static_cast<double>(g);
        }
    }
    return std::sqrt(total);
}

template <typename T>
double clip_grad_norm(ParameterSet<T>& params, double max_norm) {
    const double norm = grad_norm(params);
    if (norm > max_norm && norm > 0) {
        const T factor = static_cast<T>(max_norm / norm);
        for (auto& p : params) {
            if (!p.trainable || !p.has_grad) {
                continue;
            }
            for (auto& g : p.grad.values()) {
                g *= factor;
            }
        }
    }
    return norm;
}

template struct Parameter<float>;
template struct Parameter<double>;
template class ParameterSet<float>;
template class ParameterSet<double>;
template ParameterSet<double> ParameterSet<float>::cast<double>() const;
template ParameterSet<float> ParameterSet<double>::cast<float>() const;
template ParameterSet<float> ParameterSet<float>::cast<float>() const;
template ParameterSet<double> ParameterSet<double>::cast<double>() const;
template void adamw_step<float>(ParameterSet<float>&, const AdamWConfig&);
template void adamw_step<double>(ParameterSet<double>&, const AdamWConfig&);
template double clip_grad_norm<float>(ParameterSet<float>&, double);
template double clip_grad_norm<double>(ParameterSet<double>&, double);
template double grad_norm<float>(const ParameterSet<float>&);
template double grad_norm<double>(const ParameterSet<double>&);

}  // namespace emgllm::numerics
