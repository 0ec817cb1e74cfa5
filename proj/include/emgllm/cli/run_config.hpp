// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "emgllm/train/config_json.hpp"
#include "emgllm/train/experiments.hpp"

namespace emgllm::cli {

using train::Json;

struct LmSection {
    lm::TinyLmConfig model;
    lm::PretrainConfig pretrain;
    int text_sequences = 20000;  // sampled transcripts for pretraining
    std::optional<lm::LoraConfig> lora;
};

struct ExperimentSection {
    int folds = 3;
    std::array<double, 3> ratios = {0.8, 0.1, 0.1};
    std::vector<double> sweep_minutes = {5.0, 10.0, 20.0};
    int sweep_max_epochs = 60;
    int ablation_max_epochs = 40;
};

// Component seeds are not part of the file format: every one is derived from
// the top-level seed.  Likewise the adaptor's input/output widths and the LM
// vocabulary size follow from the corpus, feature and LM sections.
struct RunConfig {
    std::string run_id = "default";
    std::filesystem::path output_dir = "runs";
    std::uint64_t seed = 0;
    corpus::SyntheticConfig corpus;
    train::PipelineConfig features = {adaptor::InputMode::Features};
    adaptor::AdaptorConfig adaptor;
    LmSection lm;
    objective::LossSpec loss;
    train::TrainConfig train;
    decode::DecodeConfig decode;
    train::PidPilotConfig pid;
    ExperimentSection experiment;

    std::filesystem::path root() const { return output_dir / run_id; }
    // Fills derived fields (seeds, widths, vocabulary size) and validates.
    void resolve();
};

Json to_json(const RunConfig& c);
// Overlays the file onto defaults; unknown or derived keys are rejected.
RunConfig run_config_from_json(const Json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// 64-bit FNV-1a of the compact resolved-config dump, as 16 hex digits.
std::string config_hash(const RunConfig& c);

}  // namespace emgllm::cli
