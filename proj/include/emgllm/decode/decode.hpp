// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "emgllm/lm/lm.hpp"

namespace emgllm::decode {

using numerics::Tensor;

struct DecodeConfig {
    int beam_width = 4;
    int max_len = 16;
    double length_norm = 0.0;
    bool constrained = false;  // mask BOS, PAD and UNK
};

struct BeamHypothesis {
    std::vector<int> tokens;  // ends in EOS when finished normally
    double log_prob = 0;
    bool finished = false;
    bool forced = false;      // max_len reached without EOS
    double score = 0;         // log_prob / len^length_norm
};

// Ranked best first.  prefix is P1 ++ E ++ P2 ++ BOS as embeddings.
std::vector<BeamHypothesis> beam_search(const lm::TinyLm<float>& lm, const Tensor<float>& prefix,
                                        const DecodeConfig& config);
std::vector<int> greedy_decode(const lm::TinyLm<float>& lm, const Tensor<float>& prefix, int max_len,
                               bool constrained = false);

// Drops a trailing EOS.
std::vector<int> strip_eos(std::vector<int> tokens);

struct EditCounts {
    int substitutions = 0;
    int deletions = 0;
    int insertions = 0;
    int errors() const noexcept { return substitutions + deletions + insertions; }
};

EditCounts edit_counts(const std::vector<std::string>& reference,
                       const std::vector<std::string>& hypothesis);
double wer(const std::vector<std::string>& reference, const std::vector<std::string>& hypothesis);

struct Transcription {
    std::string text;
    double log_prob = 0;
};

struct UtteranceRecord {
    int fold = 0;
    std::string utterance_id;
    std::string reference;
    std::string hypothesis;
    double log_prob = 0;
    double wer = 0;
    int n_words = 0;
    int n_errors = 0;
};

struct FoldMetrics {
    int fold = 0;
    double wer = 0;  // corpus level: errors / reference words
    double mean_utterance_wer = 0;
    int n_words = 0;
    int n_errors = 0;
};

struct SplitReport {
    std::vector<FoldMetrics> folds;
    double wer_mean = 0;
    double wer_std = 0;  // population std over folds
    std::vector<UtteranceRecord> records;
};

struct EvalItem {
    std::string utterance_id;
    std::string reference;
};

// One transcriber per fold; both sides pass through normalize_transcript.
using Transcriber = std::function<Transcription(const std::string& utterance_id)>;
SplitReport evaluate_split(const std::vector<std::vector<EvalItem>>& folds,
                           const std::vector<Transcriber>& transcribers);

double population_std(const std::vector<double>& values);

void write_predictions_jsonl(const SplitReport& report, const std::filesystem::path& path);
void write_metrics_csv(const SplitReport& report, const std::string& split,
                       const std::filesystem::path& path);

// Time-mean of a logits sequence, [1 x V].
Tensor<float> pid_pool(const Tensor<float>& logits);
Tensor<double> pid_pool(const Tensor<double>& logits);

struct PidHeadConfig {
    int hidden = 32;
    int epochs = 60;
    int batch_size = 16;
    double lr = 3e-3;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;
};

struct PidSample {
    Tensor<float> feature;  // pooled logits or any fixed-width vector
    int label = 0;
};

struct PidResult {
    double train_accuracy = 0;
    double test_accuracy = 0;
};

// Two linear layers with GeLU between, softmax cross-entropy on labels [0, classes).
PidResult train_pid_head(const std::vector<PidSample>& train, const std::vector<PidSample>& test,
                         int classes, const PidHeadConfig& config);

}  // namespace emgllm::decode
