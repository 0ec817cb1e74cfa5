// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "emgllm/train/config_json.hpp"

namespace emgllm::train {

StrictReader::StrictReader(const Json& object, std::string path) : object_(object), path_(std::move(path)) {
    if (!object_.is_object()) {
        throw SchemaError("config section '" + path_ + "' must be a JSON object");
    }
}

const Json* StrictReader::child(const char* key) {
    seen_.insert(key);
    return object_.contains(key) ? &object_.at(key) : nullptr;
}

void StrictReader::finish() const {
    for (auto it = object_.begin(); it != object_.end(); ++it) {
        if (seen_.count(it.key()) == 0) {
            throw SchemaError("unknown config key '" + qualified(it.key()) + "'");
        }
    }
}

namespace {

template <typename E, typename Parse>
void get_enum(StrictReader& r, const char* key, E& out, Parse parse) {
    std::string s;
    r.get(key, s);
    if (!s.empty()) {
        out = parse(s);
    }
}

}  // namespace

Json to_json(const corpus::SyntheticConfig& c) {
    return {{"vocab_size", c.vocab_size},
            {"n_utterances", c.n_utterances},
            {"n_speakers", c.n_speakers},
            {"words_per_utterance_mean", c.words_per_utterance_mean},
            {"sample_rate", c.sample_rate},
            {"channels", c.channels},
            {"noise_sigma", c.noise_sigma},
            {"warp", c.warp},
            {"min_word_seconds", c.min_word_seconds},
            {"max_word_seconds", c.max_word_seconds},
            {"silence_seconds", c.silence_seconds},
            {"seed", c.seed}};
}

void from_json(const Json& j, const std::string& path, corpus::SyntheticConfig& c) {
    StrictReader r(j, path);
    r.get("vocab_size", c.vocab_size);
    r.get("n_utterances", c.n_utterances);
    r.get("n_speakers", c.n_speakers);
    r.get("words_per_utterance_mean", c.words_per_utterance_mean);
    r.get("sample_rate", c.sample_rate);
    r.get("channels", c.channels);
    r.get("noise_sigma", c.noise_sigma);
    r.get("warp", c.warp);
    r.get("min_word_seconds", c.min_word_seconds);
    r.get("max_word_seconds", c.max_word_seconds);
    r.get("silence_seconds", c.silence_seconds);
    r.get("seed", c.seed);
    r.finish();
}

Json to_json(const PipelineConfig& c) {
    return {{"mode", adaptor::to_string(c.mode)},
            {"target_rate", c.target_rate},
            {"frame_length", c.frames.frame_length},
            {"hop", c.frames.hop},
            {"stft_size", c.frames.stft_size},
            {"lowpass_window", c.frames.lowpass_window}};
}

void from_json(const Json& j, const std::string& path, PipelineConfig& c) {
    StrictReader r(j, path);
    get_enum(r, "mode", c.mode, adaptor::parse_input_mode);
    r.get("target_rate", c.target_rate);
    r.get("frame_length", c.frames.frame_length);
    r.get("hop", c.frames.hop);
    r.get("stft_size", c.frames.stft_size);
    r.get("lowpass_window", c.frames.lowpass_window);
    r.finish();
}

Json to_json(const adaptor::AdaptorConfig& c) {
    return {{"input_mode", adaptor::to_string(c.input_mode)},
            {"input_dim", c.input_dim},
            {"stem_stride", c.stem_stride},
            {"stem_kernel", c.stem_kernel},
            {"res_blocks", c.res_blocks},
            {"res_kernel", c.res_kernel},
            {"conv_channels", c.conv_channels},
            {"backbone", adaptor::to_string(c.backbone)},
            {"backbone_hidden", c.backbone_hidden},
            {"backbone_layers", c.backbone_layers},
            {"backbone_heads", c.backbone_heads},
            {"tail_stride", c.tail_stride},
            {"tail_kernel", c.tail_kernel},
            {"inner_dim", c.inner_dim},
            {"output_dim", c.output_dim}};
}

void from_json(const Json& j, const std::string& path, adaptor::AdaptorConfig& c) {
    StrictReader r(j, path);
    get_enum(r, "input_mode", c.input_mode, adaptor::parse_input_mode);
    r.get("input_dim", c.input_dim);
    r.get("stem_stride", c.stem_stride);
    r.get("stem_kernel", c.stem_kernel);
    r.get("res_blocks", c.res_blocks);
    r.get("res_kernel", c.res_kernel);
    r.get("conv_channels", c.conv_channels);
    get_enum(r, "backbone", c.backbone, adaptor::parse_backbone);
    r.get("backbone_hidden", c.backbone_hidden);
    r.get("backbone_layers", c.backbone_layers);
    r.get("backbone_heads", c.backbone_heads);
    r.get("tail_stride", c.tail_stride);
    r.get("tail_kernel", c.tail_kernel);
    r.get("inner_dim", c.inner_dim);
    r.get("output_dim", c.output_dim);
    r.finish();
}

Json to_json(const lm::TinyLmConfig& c) {
    return {{"vocab_size", c.vocab_size}, {"embed_dim", c.embed_dim}, {"layers", c.layers},
            {"heads", c.heads},           {"ff_dim", c.ff_dim},       {"max_seq_len", c.max_seq_len},
            {"prompt_tokens", c.prompt_tokens}};
}

void from_json(const Json& j, const std::string& path, lm::TinyLmConfig& c) {
    StrictReader r(j, path);
    r.get("vocab_size", c.vocab_size);
    r.get("embed_dim", c.embed_dim);
    r.get("layers", c.layers);
    r.get("heads", c.heads);
    r.get("ff_dim", c.ff_dim);
    r.get("max_seq_len", c.max_seq_len);
    r.get("prompt_tokens", c.prompt_tokens);
    r.finish();
}

Json to_json(const lm::PretrainConfig& c) {
    return {{"steps", c.steps},
            {"batch_size", c.batch_size},
            {"lr", c.lr},
            {"weight_decay", c.weight_decay},
            {"warmup_fraction", c.warmup_fraction},
            {"clip_norm", c.clip_norm},
            {"rehearsal_fraction", c.rehearsal_fraction},
            {"min_repeat", c.min_repeat},
            {"max_repeat", c.max_repeat},
            {"min_gap", c.min_gap},
            {"max_gap", c.max_gap},
            {"noise", c.noise},
            {"scale_jitter", c.scale_jitter},
            {"word_dropout", c.word_dropout},
            {"seed", c.seed}};
}

void from_json(const Json& j, const std::string& path, lm::PretrainConfig& c) {
    StrictReader r(j, path);
    r.get("steps", c.steps);
    r.get("batch_size", c.batch_size);
    r.get("lr", c.lr);
    r.get("weight_decay", c.weight_decay);
    r.get("warmup_fraction", c.warmup_fraction);
    r.get("clip_norm", c.clip_norm);
    r.get("rehearsal_fraction", c.rehearsal_fraction);
    r.get("min_repeat", c.min_repeat);
    r.get("max_repeat", c.max_repeat);
    r.get("min_gap", c.min_gap);
    r.get("max_gap", c.max_gap);
    r.get("noise", c.noise);
    r.get("scale_jitter", c.scale_jitter);
    r.get("word_dropout", c.word_dropout);
    r.get("seed", c.seed);
    r.finish();
}

Json to_json(const lm::LoraConfig& c) {
    return {{"rank", c.rank}, {"alpha", c.alpha}, {"targets", c.targets}};
}

void from_json(const Json& j, const std::string& path, lm::LoraConfig& c) {
    StrictReader r(j, path);
    r.get("rank", c.rank);
    r.get("alpha", c.alpha);
    r.get("targets", c.targets);
    r.finish();
}

Json to_json(const objective::LossSpec& c) {
    return {{"kind", objective::to_string(c.kind)},
            {"tau", c.tau},
            {"ctc_blank_id", c.ctc_blank_id},
            {"dilation_factor", c.dilation_factor},
            {"ctc_length_policy", objective::to_string(c.ctc_length_policy)}};
}

void from_json(const Json& j, const std::string& path, objective::LossSpec& c) {
    StrictReader r(j, path);
    get_enum(r, "kind", c.kind, objective::parse_loss_kind);
    r.get("tau", c.tau);
    r.get("ctc_blank_id", c.ctc_blank_id);
    r.get("dilation_factor", c.dilation_factor);
    get_enum(r, "ctc_length_policy", c.ctc_length_policy, objective::parse_ctc_length_policy);
    r.finish();
}

Json to_json(const TrainConfig& c) {
    return {{"lr_max", c.lr_max},
            {"weight_decay", c.weight_decay},
            {"batch_size", c.batch_size},
            {"max_epochs", c.max_epochs},
            {"patience", c.patience},
            {"warmup_fraction", c.warmup_fraction},
            {"lr_floor_ratio", c.lr_floor_ratio},
            {"clip_norm", c.clip_norm},
            {"val_wer_every", c.val_wer_every}};
}

void from_json(const Json& j, const std::string& path, TrainConfig& c) {
    StrictReader r(j, path);
    r.get("lr_max", c.lr_max);
    r.get("weight_decay", c.weight_decay);
    r.get("batch_size", c.batch_size);
    r.get("max_epochs", c.max_epochs);
    r.get("patience", c.patience);
    r.get("warmup_fraction", c.warmup_fraction);
    r.get("lr_floor_ratio", c.lr_floor_ratio);
    r.get("clip_norm", c.clip_norm);
    r.get("val_wer_every", c.val_wer_every);
    r.finish();
}

Json to_json(const decode::DecodeConfig& c) {
    return {{"beam_width", c.beam_width},
            {"max_len", c.max_len},
            {"length_norm", c.length_norm},
            {"constrained", c.constrained}};
}

void from_json(const Json& j, const std::string& path, decode::DecodeConfig& c) {
    StrictReader r(j, path);
    r.get("beam_width", c.beam_width);
    r.get("max_len", c.max_len);
    r.get("length_norm", c.length_norm);
    r.get("constrained", c.constrained);
    r.finish();
}

Json to_json(const decode::PidHeadConfig& c) {
    return {{"hidden", c.hidden},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"lr", c.lr},
            {"weight_decay", c.weight_decay}};
}

void from_json(const Json& j, const std::string& path, decode::PidHeadConfig& c) {
    StrictReader r(j, path);
    r.get("hidden", c.hidden);
    r.get("epochs", c.epochs);
    r.get("batch_size", c.batch_size);
    r.get("lr", c.lr);
    r.get("weight_decay", c.weight_decay);
    r.finish();
}

}  // namespace emgllm::train
