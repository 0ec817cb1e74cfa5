// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>

#include "emgllm/numerics/ops.hpp"
#include "emgllm/numerics/parameters.hpp"
#include "emgllm/numerics/random.hpp"

namespace emgllm::numerics {

// Parameter handles for the building blocks shared by the adaptor and the LM.

struct LinearLayer {
    int w = -1;
    int b = -1;  // -1: no bias
};

struct ConvLayer {
    int kernel = -1;  // [K x Cin x Cout]
    int bias = -1;
    int stride = 1;
};

struct NormLayer {
    int gain = -1;
    int bias = -1;
};

struct LstmLayer {
    int w_ih = -1;
    int w_hh = -1;
    int bias = -1;
};

struct TransformerBlock {
    NormLayer ln1;
    LinearLayer q, k, v, o;
    NormLayer ln2;
    LinearLayer ff1, ff2;
};

enum class Init { FanInUniform, Normal002 };

template <typename T>
Tensor<T> init_tensor(Shape shape, int fan_in, Init init, Rng& rng) {
    if (init == Init::Normal002) {
        return normal_tensor<T>(std::move(shape), 0.02, rng);
    }
    return uniform_tensor<T>(std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

template <typename T>
LinearLayer add_linear(ParameterSet<T>& ps, const std::string& name, int in, int out, bool bias,
                       Rng& rng, Init init = Init::FanInUniform) {
    LinearLayer l;
    l.w = ps.add(name + ".weight", init_tensor<T>({in, out}, in, init, rng));
    if (bias) {
        l.b = init == Init::Normal002
                  ? ps.add(name + ".bias", Tensor<T>({out}))
                  : ps.add(name + ".bias", init_tensor<T>({out}, in, init, rng));
    }
    return l;
}

template <typename T>
ConvLayer add_conv(ParameterSet<T>& ps, const std::string& name, int kernel, int in, int out,
                   int stride, Rng& rng) {
    ConvLayer c;
    c.kernel = ps.add(name + ".kernel", init_tensor<T>({kernel, in, out}, kernel * in,
                                                       Init::FanInUniform, rng));
    c.bias = ps.add(name + ".bias", init_tensor<T>({out}, kernel * in, Init::FanInUniform, rng));
    c.stride = stride;
    return c;
}

template <typename T>
NormLayer add_norm(ParameterSet<T>& ps, const std::string& name, int dim) {
    return NormLayer{ps.add(name + ".gain", Tensor<T>({dim}, T(1))),
                     ps.add(name + ".bias", Tensor<T>({dim}))};
}

template <typename T>
LstmLayer add_lstm(ParameterSet<T>& ps, const std::string& name, int in, int hidden, Rng& rng) {
    LstmLayer l;
    l.w_ih = ps.add(name + ".w_ih", init_tensor<T>({in, 4 * hidden}, hidden, Init::FanInUniform, rng));
    l.w_hh = ps.add(name + ".w_hh",
                    init_tensor<T>({hidden, 4 * hidden}, hidden, Init::FanInUniform, rng));
    l.bias = ps.add(name + ".bias", init_tensor<T>({4 * hidden}, hidden, Init::FanInUniform, rng));
    return l;
}

template <typename T>
TransformerBlock add_transformer_block(ParameterSet<T>& ps, const std::string& name, int dim,
                                       int ff, bool bias, Rng& rng, Init init) {
    TransformerBlock b;
    b.ln1 = add_norm(ps, name + ".ln1", dim);
    b.q = add_linear(ps, name + ".attn.q", dim, dim, bias, rng, init);
    b.k = add_linear(ps, name + ".attn.k", dim, dim, bias, rng, init);
    b.v = add_linear(ps, name + ".attn.v", dim, dim, bias, rng, init);
    b.o = add_linear(ps, name + ".attn.o", dim, dim, bias, rng, init);
    b.ln2 = add_norm(ps, name + ".ln2", dim);
    b.ff1 = add_linear(ps, name + ".ff1", dim, ff, bias, rng, init);
    b.ff2 = add_linear(ps, name + ".ff2", ff, dim, bias, rng, init);
    return b;
}

template <typename T>
Var<T> opt_param(Tape<T>& tape, ParameterSet<T>& ps, int handle) {
    return handle < 0 ? Var<T>{} : tape.param(ps[handle]);
}

template <typename T>
Var<T> apply(Tape<T>& tape, ParameterSet<T>& ps, const LinearLayer& l, Var<T> x) {
    return linear(x, tape.param(ps[l.w]), opt_param(tape, ps, l.b));
}

template <typename T>
Var<T> apply(Tape<T>& tape, ParameterSet<T>& ps, const ConvLayer& c, Var<T> x) {
    return conv1d(x, tape.param(ps[c.kernel]), opt_param(tape, ps, c.bias), c.stride,
                  Padding::SameLeft);
}

template <typename T>
Var<T> apply(Tape<T>& tape, ParameterSet<T>& ps, const NormLayer& n, Var<T> x) {
    return layer_norm(x, tape.param(ps[n.gain]), tape.param(ps[n.bias]));
}

template <typename T>
Var<T> apply(Tape<T>& tape, ParameterSet<T>& ps, const LstmLayer& l, Var<T> x, bool reverse) {
    return lstm(x, tape.param(ps[l.w_ih]), tape.param(ps[l.w_hh]), tape.param(ps[l.bias]),
                reverse);
}

// Pre-norm block: x + attn(ln1(x)), then + ff(ln2(.)) with GeLU.
template <typename T>
Var<T> apply(Tape<T>& tape, ParameterSet<T>& ps, const TransformerBlock& b, Var<T> x, int heads,
             bool causal, bool use_rotary) {
    auto h = apply(tape, ps, b.ln1, x);
    auto q = apply(tape, ps, b.q, h);
    auto k = apply(tape, ps, b.k, h);
    auto v = apply(tape, ps, b.v, h);
    if (use_rotary) {
        q = rotary(q, heads);
        k = rotary(k, heads);
    }
    x = add(x, apply(tape, ps, b.o, attention(q, k, v, heads, causal)));
    auto f = gelu(apply(tape, ps, b.ff1, apply(tape, ps, b.ln2, x)));
    return add(x, apply(tape, ps, b.ff2, f));
}

// Additive sinusoidal position table [rows x dim].
template <typename T>
Tensor<T> sinusoidal_positions(int rows, int dim, int offset = 0) {
    Tensor<T> pe({rows, dim});
    for (int r = 0; r < rows; ++r) {
        for (int i = 0; i < dim; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
            const double a = (r + offset) * freq;
            pe.at(r, i) = static_cast<T>(i % 2 == 0 ? std::sin(a) : std::cos(a));
        }
    }
    return pe;
}

}  // namespace emgllm::numerics
