// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "emgllm/numerics/layers.hpp"

namespace emgllm::objective {

using numerics::ParameterSet;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

enum class LossKind { CeTemperature, Ctc };

// strict: T' >= 2|target| + 1.  feasible: T' >= |target| + number of adjacent repeats,
// the least length any alignment needs.
enum class CtcLengthPolicy { Strict, Feasible };

std::string to_string(LossKind k);
std::string to_string(CtcLengthPolicy p);
LossKind parse_loss_kind(const std::string& s);
CtcLengthPolicy parse_ctc_length_policy(const std::string& s);

struct LossSpec {
    LossKind kind = LossKind::CeTemperature;
    double tau = 0.8;
    int ctc_blank_id = -1;  // -1: |V|, resolved by the caller
    int dilation_factor = 2;
    CtcLengthPolicy ctc_length_policy = CtcLengthPolicy::Strict;

    void validate() const;
};

// Sum over rows of -log softmax(z_t / tau)[y_t].  logits [N x V], targets N ids.
template <typename T>
Var<T> ce_temperature_loss(Var<T> logits, std::span<const int> targets, T tau);

// Kernel-3 stride-1 conv over the embedding width; identity puts I on the current-frame tap.
template <typename T>
numerics::ConvLayer add_dilation_conv(ParameterSet<T>& ps, const std::string& name, int dim,
                                      bool identity, numerics::Rng& rng);

// Linear interpolation to factor * rows, then the conv.
template <typename T>
Var<T> dilate_embeddings(Tape<T>& tape, ParameterSet<T>& ps, const numerics::ConvLayer& conv,
                         Var<T> embeddings, int factor);

int ctc_min_length(std::span<const int> target, CtcLengthPolicy policy);

// Negative log marginal over blank-augmented alignments; frame_logits [T' x (|V|+1)],
// the softmax is taken inside.  Throws "CTC length constraint" when T' is too short.
template <typename T>
Var<T> ctc_loss(Var<T> frame_logits, std::span<const int> target, int blank,
                CtcLengthPolicy policy = CtcLengthPolicy::Strict);

// Per-frame argmax, repeats collapsed, blanks dropped.
std::vector<int> ctc_greedy_decode(const Tensor<float>& frame_logits, int blank);

}  // namespace emgllm::objective
