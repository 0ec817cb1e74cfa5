// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "emgllm/train/train.hpp"

namespace emgllm::train {

// Everything a fold run needs besides the corpus and the pretrained LM.
struct ExperimentSpec {
    PipelineConfig pipeline;
    adaptor::AdaptorConfig adaptor;
    TrainConfig train;
    decode::DecodeConfig decode;
    std::optional<lm::LoraConfig> lora;
    bool evaluate_untrained = false;
};

struct FoldHooks {
    std::function<void(int fold, const EpochRecord&)> on_epoch;
    // Called after training and test evaluation of each fold.
    std::function<void(int fold, EmgToText&, const InputPipeline&, const TrainResult&)> on_fold;
};

struct ExperimentResult {
    decode::SplitReport test;
    std::optional<decode::SplitReport> untrained_test;
    std::vector<TrainResult> runs;  // one per fold
    std::int64_t trainable_params = 0;
    double initial_val_loss = 0;  // fold means
    double best_val_loss = 0;
};

// Trains and evaluates one model per fold.  Each fold gets its own LM copy, so
// LoRA deltas never leak between folds.
ExperimentResult run_experiment(const corpus::CorpusManifest& corpus,
                                const std::vector<corpus::FoldAssignment>& folds,
                                const lm::LoadedLm& lm, const ExperimentSpec& spec,
                                const FoldHooks& hooks = {});

struct AblationVariant {
    std::string name;
    adaptor::AdaptorConfig adaptor;
    objective::LossSpec loss;
};

// fc, resblock, resblock+transformer_sin, resblock+lstm, resblock+bilstm,
// resblock+transformer_rope and resblock+bilstm with CTC.
std::vector<AblationVariant> default_ablation_suite(const adaptor::AdaptorConfig& base,
                                                    const objective::LossSpec& ce,
                                                    const objective::LossSpec& ctc);

struct AblationRow {
    std::string variant;
    std::string loss;
    bool ok = false;
    std::string error;
    std::int64_t trainable_params = 0;
    double wer_mean = 0;
    double wer_std = 0;
    double initial_val_loss = 0;
    double final_val_loss = 0;

    bool improved() const { return ok && final_val_loss < initial_val_loss; }
};

// A variant that throws becomes a failed row and the suite continues.
std::vector<AblationRow> run_ablation(const corpus::CorpusManifest& corpus,
                                      const std::vector<corpus::FoldAssignment>& folds,
                                      const lm::LoadedLm& lm, const ExperimentSpec& spec,
                                      const std::vector<AblationVariant>& variants,
                                      const std::function<void(const AblationRow&)>& on_row = {});

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path);
std::string ablation_table(const std::vector<AblationRow>& rows);

struct SweepRow {
    double requested_minutes = 0;
    double minutes = 0;  // mean realized training duration over folds
    int n_train = 0;     // mean utterance count over folds, rounded down
    bool clamped = false;
    double wer_mean = 0;
    double wer_std = 0;
};

// minutes must be ascending.  Budgets outside the training split are clamped
// (at most every utterance, at least one) and reported through warn.
std::vector<SweepRow> data_efficiency_sweep(const corpus::CorpusManifest& corpus,
                                            const std::vector<corpus::FoldAssignment>& folds,
                                            const lm::LoadedLm& lm, const ExperimentSpec& spec,
                                            const std::vector<double>& minutes,
                                            const std::function<void(const std::string&)>& warn = {});

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);

struct PidPilotConfig {
    decode::PidHeadConfig head;
    int n_speakers = 4;
    int n_utterances = 1000;
    double test_fraction = 0.25;
    int adaptor_epochs = 10;  // transcription training of the adaptor behind the head-only probe
    int joint_epochs = 12;    // adaptor + head trained on person labels
    double joint_lr = 1e-3;
};

struct PidPilotResult {
    int speakers = 0;
    int n_train = 0;
    int n_test = 0;
    double probe_accuracy = 0;           // trained adaptor + head, frozen LM
    double end_to_end_accuracy = 0;      // trained adaptor + head, no LM
    double shuffled_accuracy = 0;        // as the probe, permuted training labels
    double frozen_adaptor_accuracy = 0;  // head only, on frozen_model's pooled logits
};

// Person identification from time-mean pooled unprompted LM logits.  The probe
// trains a fresh adaptor and a two-layer head through the frozen LM; the
// end-to-end variant drops the LM and pools the adaptor output.  frozen_model
// supplies the LM, the adaptor config and the head-only baseline.
PidPilotResult run_pid_pilot(const corpus::CorpusManifest& corpus, EmgToText& frozen_model,
                             const InputPipeline& pipeline, const PidPilotConfig& config,
    std::uint64_t seed);

}  // namespace emgllm::train
