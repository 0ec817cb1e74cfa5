// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "emgllm/cli/run_config.hpp"

namespace emgllm::cli {

struct CommandOptions {
    bool force = false;
    int jobs = 1;  // worker threads for featurization
    std::optional<std::filesystem::path> checkpoint;
    bool oracle = false;  // eval: transcriber returns the references
    std::ostream* log = nullptr;
};

// Every command writes under config.root()/<command dir> and finishes with a
// run_manifest.json there.  Layout:
//   corpus/    gen          manifest.jsonl, vocab.txt, signals/
//   features/  featurize    <utterance>.f32 frames, index.json
//   lm/        pretrain-lm  lm.json + lm.bin, pretrain.json
//   train/     train        fold<k>/checkpoint.*, fold<k>/history.csv, metrics_test.csv, ...
//   eval/      eval         metrics_test.csv, predictions_test.jsonl, summary.json
//   ablate/    ablate       ablation.csv, ablation.txt
//   sweep/     sweep        sweep.csv
//   pid/       pid          pid.json
void cmd_gen(const RunConfig& config, const CommandOptions& options);
void cmd_featurize(const RunConfig& config, const CommandOptions& options);
void cmd_pretrain_lm(const RunConfig& config, const CommandOptions& options);
void cmd_train(const RunConfig& config, const CommandOptions& options);
void cmd_eval(const RunConfig& config, const CommandOptions& options);
void cmd_ablate(const RunConfig& config, const CommandOptions& options);
void cmd_sweep(const RunConfig& config, const CommandOptions& options);
void cmd_pid(const RunConfig& config, const CommandOptions& options);

const std::vector<std::string>& command_names();
void run_command(const std::string& name, const RunConfig& config, const CommandOptions& options);

// Text-only LM corpus: transcripts sampled from the corpus's word-sequence
// model with seeds disjoint from the recorded utterances.
std::vector<std::vector<int>> sample_text(const corpus::SyntheticConfig& corpus, int count,
                                          std::uint64_t seed);

}  // namespace emgllm::cli
