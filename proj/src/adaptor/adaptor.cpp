// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "emgllm/adaptor/adaptor.hpp"

#include <sstream>

#include "emgllm/error.hpp"

namespace emgllm::adaptor {

using namespace numerics;

std::string to_string(InputMode m) { return m == InputMode::Raw ? "raw" : "features"; }

std::string to_string(Backbone b) {
    switch (b) {
        case Backbone::NoneFc: return "none_fc";
        case Backbone::Lstm: return "lstm";
        case Backbone::Bilstm: return "bilstm";
        case Backbone::TransformerSin: return "transformer_sin";
        case Backbone::TransformerRope: return "transformer_rope";
    }
    return "?";
}

InputMode parse_input_mode(const std::string& s) {
    if (s == "raw") {
        return InputMode::Raw;
    }
    if (s == "features") {
        return InputMode::Features;
    }
    throw ParameterError("unknown input_mode '" + s + "' (expected raw|features)");
}

Backbone parse_backbone(const std::string& s) {
    for (Backbone b : {Backbone::NoneFc, Backbone::Lstm, Backbone::Bilstm, Backbone::TransformerSin,
                       Backbone::TransformerRope}) {
        if (to_string(b) == s) {
            return b;
        }
    }
    throw ParameterError("unknown backbone '" + s +
                         "' (expected none_fc|lstm|bilstm|transformer_sin|transformer_rope)");
}

AdaptorConfig AdaptorConfig::for_mode(InputMode mode, int channels) {
    AdaptorConfig c;
    c.input_mode = mode;
    if (mode == InputMode::Raw) {
        c.input_dim = channels;
    } else {
        c.input_dim = channels * 14;
        c.stem_stride = 1;
        c.stem_kernel = 3;
    }
    return c;
}

int AdaptorConfig::total_downsample() const {
    int f = stem_stride * tail_stride;
    for (int i = 0; i < res_blocks; ++i) {
        f *= 2;
    }
    return f;
}

int AdaptorConfig::backbone_output_dim() const {
    switch (backbone) {
        case Backbone::NoneFc:
        case Backbone::Lstm:
        case Backbone::TransformerSin:
        case Backbone::TransformerRope: return backbone_hidden;
        case Backbone::Bilstm: return 2 * backbone_hidden;
    }
    return backbone_hidden;
}

void AdaptorConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v < 1) {
            throw ParameterError(std::string("adaptor ") + name + " must be >= 1, got " +
                                 std::to_string(v));
        }
    };
    positive(input_dim, "input_dim");
    positive(stem_stride, "stem_stride");
    positive(stem_kernel, "stem_kernel");
    positive(res_kernel, "res_kernel");
    positive(conv_channels, "conv_channels");
    positive(backbone_hidden, "backbone_hidden");
    positive(backbone_layers, "backbone_layers");
    positive(tail_stride, "tail_stride");
    positive(tail_kernel, "tail_kernel");
    positive(inner_dim, "inner_dim");
    positive(output_dim, "output_dim");
    if (res_blocks < 0) {
        throw ParameterError("adaptor res_blocks must be >= 0");
    }
    if ((backbone == Backbone::TransformerSin || backbone == Backbone::TransformerRope) &&
        (backbone_heads < 1 || backbone_hidden % backbone_heads != 0 ||
         (backbone == Backbone::TransformerRope && (backbone_hidden / backbone_heads) % 2 != 0))) {
        throw ParameterError("adaptor backbone_hidden must split into backbone_heads (even head size for rope)");
    }
}

int output_length(int length, const AdaptorConfig& config) {
    auto ceil_div = [](int a, int b) { return (a + b - 1) / b; };
    int t = ceil_div(length, config.stem_stride);
    for (int i = 0; i < config.res_blocks; ++i) {
        t = ceil_div(t, 2);
    }
    return ceil_div(t, config.tail_stride);
}

template <typename T>
Adaptor<T>::Adaptor(const AdaptorConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(derive_seed(seed, "adaptor"));
    const int c = config_.conv_channels;
    const int h = config_.backbone_hidden;
    stem_ = add_conv(params_, "adaptor.stem", config_.stem_kernel, config_.input_dim, c,
                     config_.stem_stride, rng);
    for (int i = 0; i < config_.res_blocks; ++i) {
        const std::string name = "adaptor.res" + std::to_string(i);
        ResBlock b;
        b.conv1 = add_conv(params_, name + ".conv1", config_.res_kernel, c, c, 2, rng);
        b.conv2 = add_conv(params_, name + ".conv2", config_.res_kernel, c, c, 1, rng);
        b.skip = add_conv(params_, name + ".skip", 1, c, c, 2, rng);
        blocks_.push_back(b);
    }
    switch (config_.backbone) {
        case Backbone::NoneFc:
            fc_ = add_linear(params_, "adaptor.fc", c, h, true, rng);
            break;
        case Backbone::Lstm:
        case Backbone::Bilstm: {
            const bool bi = config_.backbone == Backbone::Bilstm;
            int in = c;
            for (int l = 0; l < config_.backbone_layers; ++l) {
                const std::string name = "adaptor.lstm" + std::to_string(l);
                lstm_fwd_.push_back(add_lstm(params_, name + (bi ? ".fwd" : ""), in, h, rng));
                if (bi) {
                    lstm_bwd_.push_back(add_lstm(params_, name + ".bwd", in, h, rng));
                }
                in = bi ? 2 * h : h;
            }
            break;
        }
        case Backbone::TransformerSin:
        case Backbone::TransformerRope:
            fc_ = add_linear(params_, "adaptor.tf_in", c, h, true, rng);
            for (int l = 0; l < config_.backbone_layers; ++l) {
                tf_.push_back(add_transformer_block(params_, "adaptor.tf" + std::to_string(l), h,
                                                    2 * h, true, rng, Init::FanInUniform));
            }
            tf_norm_ = add_norm(params_, "adaptor.tf_norm", h);
            break;
    }
    tail_ = add_conv(params_, "adaptor.tail", config_.tail_kernel, config_.backbone_output_dim(),
                     config_.inner_dim, config_.tail_stride, rng);
    proj1_ = add_linear(params_, "adaptor.proj1", config_.inner_dim, config_.inner_dim, true, rng);
    proj2_ = add_linear(params_, "adaptor.proj2", config_.inner_dim, config_.output_dim, true, rng);
}

template <typename T>
Var<T> Adaptor<T>::forward(Tape<T>& tape, Var<T> input) {
    const int len = input.rows();
    if (input.cols() != config_.input_dim) {
        throw ContractError("adaptor input has " + std::to_string(input.cols()) +
                            " columns, expected " + std::to_string(config_.input_dim));
    }
    if (len < config_.total_downsample()) {
        throw ContractError("adaptor input too short: T=" + std::to_string(len) +
                            ", minimum length is " + std::to_string(config_.total_downsample()));
    }
    auto& ps = params_;
    auto x = gelu(apply(tape, ps, stem_, input));
    for (const auto& b : blocks_) {
        auto y = gelu(apply(tape, ps, b.conv1, x));
        y = apply(tape, ps, b.conv2, y);
        x = gelu(add(y, apply(tape, ps, b.skip, x)));
    }
    switch (config_.backbone) {
        case Backbone::NoneFc:
            x = gelu(apply(tape, ps, fc_, x));
            break;
        case Backbone::Lstm:
            for (const auto& l : lstm_fwd_) {
                x = apply(tape, ps, l, x, false);
            }
            break;
        case Backbone::Bilstm:
            for (std::size_t l = 0; l < lstm_fwd_.size(); ++l) {
                x = concat_cols(apply(tape, ps, lstm_fwd_[l], x, false),
                                apply(tape, ps, lstm_bwd_[l], x, true));
            }
            break;
        case Backbone::TransformerSin:
        case Backbone::TransformerRope: {
            const bool rope = config_.backbone == Backbone::TransformerRope;
            x = apply(tape, ps, fc_, x);
            if (!rope) {
                x = add(x, tape.constant(sinusoidal_positions<T>(x.rows(), x.cols())));
            }
            for (const auto& blk : tf_) {
                x = apply(tape, ps, blk, x, config_.backbone_heads, false, rope);
            }
            x = apply(tape, ps, tf_norm_, x);
            break;
        }
    }
    x = gelu(apply(tape, ps, tail_, x));
    x = gelu(apply(tape, ps, proj1_, x));
    return apply(tape, ps, proj2_, x);
}

template <typename T>
std::vector<std::string> Adaptor<T>::layer_list() const {
    std::vector<std::string> out;
    auto conv = [](const std::string& name, int k, int s) {
        return name + "(k" + std::to_string(k) + ",s" + std::to_string(s) + ")";
    };
    out.push_back(conv("stem_conv", config_.stem_kernel, config_.stem_stride) + "+gelu");
    for (int i = 0; i < config_.res_blocks; ++i) {
        out.push_back("resblock" + std::to_string(i) + "[" + conv("conv", config_.res_kernel, 2) +
                      "+gelu," + conv("conv", config_.res_kernel, 1) + ",skip" +
                      conv("conv", 1, 2) + "]+gelu");
    }
    const std::string n = std::to_string(config_.backbone_layers);
    switch (config_.backbone) {
        case Backbone::NoneFc: out.push_back("linear+gelu"); break;
        case Backbone::Lstm: out.push_back("lstm(" + n + "L)"); break;
        case Backbone::Bilstm: out.push_back("bilstm(" + n + "L)"); break;
        case Backbone::TransformerSin: out.push_back("transformer_sin(" + n + "L)"); break;
        case Backbone::TransformerRope: out.push_back("transformer_rope(" + n + "L)"); break;
    }
    out.push_back(conv("tail_conv", config_.tail_kernel, config_.tail_stride) + "+gelu");
    out.push_back("linear(" + std::to_string(config_.inner_dim) + "->" +
                  std::to_string(config_.inner_dim) + ")+gelu");
    out.push_back("linear(" + std::to_string(config_.inner_dim) + "->" +
                  std::to_string(config_.output_dim) + ")");
    return out;
}

template <typename T>
std::string Adaptor<T>::wiring() const {
    std::ostringstream os;
    const auto layers = layer_list();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        os << (i ? " -> " : "") << layers[i];
    }
    return os.str();
}

template class Adaptor<float>;
template class Adaptor<double>;

}  // namespace emgllm::adaptor
