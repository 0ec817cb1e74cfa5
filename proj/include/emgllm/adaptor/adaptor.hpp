// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emgllm/numerics/layers.hpp"

namespace emgllm::adaptor {

using numerics::ParameterSet;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

enum class InputMode { Raw, Features };
enum class Backbone { NoneFc, Lstm, Bilstm, TransformerSin, TransformerRope };

std::string to_string(InputMode m);
std::string to_string(Backbone b);
InputMode parse_input_mode(const std::string& s);
Backbone parse_backbone(const std::string& s);

struct AdaptorConfig {
    InputMode input_mode = InputMode::Raw;
    int input_dim = 8;
    int stem_stride = 6;
    int stem_kernel = 12;
    int res_blocks = 2;
    int res_kernel = 3;
    int conv_channels = 64;
    Backbone backbone = Backbone::Bilstm;
    int backbone_hidden = 64;
    int backbone_layers = 1;
    int backbone_heads = 4;
    int tail_stride = 2;
    int tail_kernel = 3;
    int inner_dim = 128;   // F~
    int output_dim = 64;   // F, the LM embedding width

    // Defaults for a given input mode (features: 112 inputs, stride-1 stem).
    static AdaptorConfig for_mode(InputMode mode, int channels = 8);

    int total_downsample() const;
    int backbone_output_dim() const;
    void validate() const;
};

// Per-stage ceil(T / stride) composition.
int output_length(int length, const AdaptorConfig& config);

template <typename T>
class Adaptor {
   public:
    Adaptor(const AdaptorConfig& config, std::uint64_t seed);

    const AdaptorConfig& config() const { return config_; }
    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }

    // input [T x input_dim] -> [output_length(T) x output_dim]
    Var<T> forward(Tape<T>& tape, Var<T> input);
    Var<T> forward(Tape<T>& tape, const Tensor<T>& input) { return forward(tape, tape.constant(input)); }

    // Ordered description of the layers, e.g. "stem_conv(k12,s6)".
    std::vector<std::string> layer_list() const;
    std::string wiring() const;

    std::int64_t param_count(bool trainable_only) const { return params_.count(trainable_only); }

    // Same architecture with parameters copied into another precision.
    template <typename U>
    Adaptor<U> cast() const;

    void set_params(ParameterSet<T> params) { params_ = std::move(params); }

   private:
    struct ResBlock {
        numerics::ConvLayer conv1, conv2, skip;
    };

    AdaptorConfig config_;
    ParameterSet<T> params_;
    numerics::ConvLayer stem_;
    std::vector<ResBlock> blocks_;
    numerics::LinearLayer fc_;  // none_fc backbone, or the transformer input projection
    std::vector<numerics::LstmLayer> lstm_fwd_, lstm_bwd_;
    std::vector<numerics::TransformerBlock> tf_;
    numerics::NormLayer tf_norm_;
    numerics::ConvLayer tail_;
    numerics::LinearLayer proj1_, proj2_;
};

template <typename T>
template <typename U>
Adaptor<U> Adaptor<T>::cast() const {
    Adaptor<U> out(config_, 0);
    out.set_params(params_.template cast<U>());
    return out;
}

}  // namespace emgllm::adaptor
