// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "emgllm/numerics/tensor.hpp"

namespace emgllm::numerics {

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;    // same shape as value once allocated
    Tensor<T> adam_m;  // first moment
    Tensor<T> adam_v;  // second moment
    bool trainable = true;
    bool has_grad = false;

    void accumulate_into_grad();  // allocates a zero gradient on first use
};

// Ordered, named collection of parameters. Models refer to entries by the
// integer handle returned from add(), which stays valid across copies.
template <typename T>
class ParameterSet {
   public:
    int add(const std::string& name, Tensor<T> value, bool trainable = true);

    Parameter<T>& operator[](int handle) { return params_.at(static_cast<std::size_t>(handle)); }
    const Parameter<T>& operator[](int handle) const {
        return params_.at(static_cast<std::size_t>(handle));
    }
    Parameter<T>& get(const std::string& name);
    const Parameter<T>& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    int handle(const std::string& name) const;

    std::size_t size() const noexcept { return params_.size(); }
    auto begin() noexcept { return params_.begin(); }
    auto end() noexcept { return params_.end(); }
    auto begin() const noexcept { return params_.begin(); }
    auto end() const noexcept { return params_.end(); }

    // Exact number of scalar entries, optionally restricted to trainable tensors.
    std::int64_t count(bool trainable_only) const;

    void zero_grad();
    void set_trainable(bool trainable);
    void set_trainable_prefix(const std::string& prefix, bool trainable);

    std::int64_t step_count() const noexcept { return step_count_; }
    void set_step_count(std::int64_t n) noexcept { step_count_ = n; }

    template <typename U>
    ParameterSet<U> cast() const;

   private:
    template <typename U>
    friend class ParameterSet;

    std::vector<Parameter<T>> params_;
    std::map<std::string, int> index_;
    std::int64_t step_count_ = 0;
};

struct AdamWConfig {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled weight decay (Loshchilov & Hutter): p <- p - lr*wd*p, then the
// bias-corrected Adam update. Frozen parameters are never touched.
template <typename T>
void adamw_step(ParameterSet<T>& params, const AdamWConfig& config);

// Scales all trainable gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParameterSet<T>& params, double max_norm);

template <typename T>
double grad_norm(const ParameterSet<T>& params);

}  // namespace emgllm::numerics
