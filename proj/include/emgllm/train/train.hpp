// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "emgllm/adaptor/adaptor.hpp"
#include "emgllm/corpus/corpus.hpp"
#include "emgllm/decode/decode.hpp"
#include "emgllm/lm/lm.hpp"
#include "emgllm/objective/objective.hpp"
#include "emgllm/signal/signal.hpp"
#include "json.hpp"

namespace emgllm::train {

using numerics::ParameterSet;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

struct PipelineConfig {
    adaptor::InputMode mode = adaptor::InputMode::Raw;
    double target_rate = 800.0;
    signal::FrameSpec frames;
};

// Recording -> standardized adaptor input (raw samples or 14C feature frames).
class InputPipeline {
   public:
    InputPipeline() = default;
    explicit InputPipeline(const PipelineConfig& config) : config_(config) {}

    const PipelineConfig& config() const noexcept { return config_; }
    const signal::ColumnStats& stats() const noexcept { return stats_; }
    void set_stats(signal::ColumnStats stats) { stats_ = std::move(stats); }

    // Column statistics over the given (training) utterances.
    void fit(const corpus::CorpusManifest& corpus, const std::vector<std::string>& ids);
    Tensor<float> prepare(const corpus::EmgRecording& recording) const;
    int input_dim(int channels) const;

   private:
    Tensor<float> unnormalized(const corpus::EmgRecording& recording) const;

    PipelineConfig config_;
    signal::ColumnStats stats_;
};

struct Example {
    const corpus::Utterance* utterance = nullptr;
    std::vector<int> target;
    Tensor<float> input;

    const std::string& id() const { return utterance->id(); }
};

std::vector<Example> make_examples(const corpus::CorpusManifest& corpus,
                                   const std::vector<std::string>& ids, const InputPipeline& pipeline,
                                   const lm::Vocabulary& vocab);

// Adaptor in front of the frozen LM, trained with either loss.  The CTC arm adds
// a dilation conv and an output layer over the LM's final hidden states.
class EmgToText {
   public:
    EmgToText(const adaptor::AdaptorConfig& adaptor_config, const objective::LossSpec& loss,
              lm::TinyLm<float>& lm, lm::PromptTemplate prompt, std::uint64_t seed);

    adaptor::Adaptor<float>& adaptor() noexcept { return adaptor_; }
    const adaptor::Adaptor<float>& adaptor() const noexcept { return adaptor_; }
    lm::TinyLm<float>& lm() noexcept { return *lm_; }
    const objective::LossSpec& loss_spec() const noexcept { return loss_; }
    const lm::PromptTemplate& prompt() const noexcept { return prompt_; }
    ParameterSet<float>& head_params() noexcept { return head_; }

    // Every set holding trainable tensors: adaptor, CTC head, LoRA deltas.
    std::vector<ParameterSet<float>*> trainable_sets();
    std::int64_t trainable_count();

    Var<float> loss(Tape<float>& tape, const Tensor<float>& input, const std::vector<int>& target);
    decode::Transcription transcribe(const Tensor<float>& input, const lm::Vocabulary& vocab,
                                     const decode::DecodeConfig& config);
    // Adaptor output through the LM with no prompt, [T^ x |V|].
    Tensor<float> unprompted_logits(const Tensor<float>& input);

   private:
    Var<float> ctc_frame_logits(Tape<float>& tape, Var<float> embeddings);

    adaptor::Adaptor<float> adaptor_;
    objective::LossSpec loss_;
    lm::TinyLm<float>* lm_;
    lm::PromptTemplate prompt_;
    ParameterSet<float> head_;
    numerics::ConvLayer dilate_;
    numerics::LinearLayer ctc_out_;
};

struct TrainConfig {
    double lr_max = 5e-5;
    double weight_decay = 0.01;
    int batch_size = 8;
    int max_epochs = 500;
    int patience = 0;  // epochs without val-loss improvement before stopping; 0 disables
    double warmup_fraction = 0.1;
    double lr_floor_ratio = 0.1;
    double clip_norm = 1.0;
    int val_wer_every = 10;
    std::uint64_t seed = 0;
    objective::LossSpec loss;

    void validate() const;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0;
    double val_loss = 0;
    std::optional<double> val_wer;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    double initial_val_loss = 0;
    double best_val_loss = 0;
    int best_epoch = 0;
    std::int64_t optimizer_steps = 0;
    bool lm_unchanged = true;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Mini-batch teacher-forced training.  Losses are summed per utterance and the
// batch gradient is their mean.  The model ends holding the best-val parameters.
TrainResult train_run(EmgToText& model, const std::vector<Example>& train,
                      const std::vector<Example>& val, const TrainConfig& config,
                      const decode::DecodeConfig& decode_config, const lm::Vocabulary& vocab,
                      const EpochCallback& on_epoch = {});

double mean_loss(EmgToText& model, const std::vector<Example>& examples);
decode::SplitReport evaluate_examples(EmgToText& model, const std::vector<Example>& examples,
                                      const lm::Vocabulary& vocab, const decode::DecodeConfig& config);

// Checkpoint: adaptor, CTC head and LoRA tensors with Adam moments, pipeline
// statistics, configs and training metadata.
inline constexpr int kCheckpointVersion = 1;

struct CheckpointInfo {
    nlohmann::json run_config = nlohmann::json::object();
    int epoch = 0;
    double best_val_loss = 0;
    std::optional<double> best_val_wer;
};

void save_checkpoint(const std::filesystem::path& manifest_path, EmgToText& model,
                     const InputPipeline& pipeline, const CheckpointInfo& info);

struct CheckpointHeader {
    adaptor::AdaptorConfig adaptor;
    objective::LossSpec loss;
    PipelineConfig pipeline;
    std::optional<lm::LoraConfig> lora;
    CheckpointInfo info;
    std::uint64_t seed = 0;
};
CheckpointHeader read_checkpoint_header(const std::filesystem::path& manifest_path);
// Restores tensors into a model built from the header; returns the header.
CheckpointHeader load_checkpoint(const std::filesystem::path& manifest_path, EmgToText& model,
                                 InputPipeline& pipeline);

}  // namespace emgllm::train
