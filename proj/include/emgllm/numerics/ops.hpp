// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "emgllm/numerics/tape.hpp"
#include "emgllm/numerics/tensor.hpp"

namespace emgllm::numerics {

enum class Padding {
    SameLeft,  // zeros on the left only; output length ceil(T / stride)
    None,      // output length floor((T - K) / stride) + 1
};

// Output length of a 1D convolution and the amount of left padding it uses.
int conv1d_output_length(int length, int kernel, int stride, Padding padding);
int conv1d_left_pad(int length, int kernel, int stride, Padding padding);

// Forward kernels on plain tensors. The differentiable ops below are built on
// these, and inference code (KV-cached decoding) calls them directly.
namespace kernels {

// C = op(A) * op(B) (+ C when accumulate). Row-major storage.
template <typename T>
void gemm(const T* a, const T* b, T* c, int m, int k, int n, bool trans_a, bool trans_b,
          bool accumulate);

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias);

template <typename T>
T gelu(T x);

template <typename T>
T gelu_derivative(T x);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

// Rotates consecutive pairs inside each head by position-dependent angles.
// Row r is treated as position (position_offset + r).
template <typename T>
Tensor<T> rotary(const Tensor<T>& x, int heads, int position_offset, bool inverse = false);

// Row-wise softmax of z / tau with max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& z, T tau);

// Row-wise log(softmax(z / tau)).
template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& z, T tau);

// Multi-head scaled dot-product attention for queries at positions
// [query_offset, query_offset + Tq) over keys at positions [0, Tk).
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int heads,
                    bool causal, int query_offset);

}  // namespace kernels

// ---- differentiable operations ----------------------------------------

// Elementwise a + b; b may also be a row vector broadcast over the rows of a.
template <typename T>
Var<T> add(Var<T> a, Var<T> b);

template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Var<T> a, T factor);

template <typename T>
Var<T> sum(Var<T> a);

template <typename T>
Var<T> sum_squares(Var<T> a);

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);

// x [N x in] * w [in x out] + bias [out]; pass an invalid Var to skip the bias.
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias);

// x [T x Cin], kernel [K x Cin x Cout], bias [Cout] -> [T' x Cout].
template <typename T>
Var<T> conv1d(Var<T> x, Var<T> kernel, Var<T> bias, int stride, Padding padding);

// Exact erf-based GeLU.
template <typename T>
Var<T> gelu(Var<T> x);

template <typename T>
Var<T> tanh(Var<T> x);

// softmax(z / tau), applied to every row.
template <typename T>
Var<T> softmax_temperature(Var<T> z, T tau);

template <typename T>
Var<T> log_softmax_temperature(Var<T> z, T tau);

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));

// Rows of table selected by ids.
template <typename T>
Var<T> embedding(Var<T> table, std::span<const int> ids);

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts);

template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b);

template <typename T>
Var<T> slice_rows(Var<T> x, int begin, int end);

template <typename T>
Var<T> select_rows(Var<T> x, std::span<const int> rows);

template <typename T>
Var<T> mean_rows(Var<T> x);

// Linear interpolation along time to factor * T rows; output row i samples
// source position min(i / factor, T - 1).
template <typename T>
Var<T> interpolate_rows(Var<T> x, int factor);

// Single-layer unidirectional LSTM over the rows of x. Gate order i, f, g, o.
// w_ih [In x 4H], w_hh [H x 4H], bias [4H]. Returns [T x H].
template <typename T>
Var<T> lstm(Var<T> x, Var<T> w_ih, Var<T> w_hh, Var<T> bias, bool reverse);

template <typename T>
Var<T> rotary(Var<T> x, int heads, int position_offset = 0);

// q, k, v [T x D] with D divisible by heads.
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, int heads, bool causal);

}  // namespace emgllm::numerics
