// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "emgllm/numerics/tensor.hpp"

namespace emgllm::corpus {

using numerics::Tensor;

enum class Modality { Unvoiced };

std::string modality_name(Modality m);
Modality parse_modality(const std::string& name);

struct EmgRecording {
    Tensor<float> signal;  // [T x C]
    double sample_rate = 800.0;
    std::string speaker_id;
    Modality modality = Modality::Unvoiced;
    std::string utterance_id;

    int length() const { return signal.rows(); }
    int channels() const { return signal.cols(); }
    double seconds() const { return length() / sample_rate; }
};

struct Utterance {
    EmgRecording recording;
    std::string transcript;
    int word_count = 0;

    const std::string& id() const { return recording.utterance_id; }
};

struct SpeakerProfile {
    std::string speaker_id;
    std::vector<Tensor<float>> templates;  // one [L_w x C] template per vocabulary word
    std::vector<float> gains;              // per channel
    double noise_sigma = 0.0;
    double warp = 0.0;  // duration warp factor drawn from [1 - warp, 1 + warp]
};

struct CorpusManifest {
    std::vector<std::string> vocabulary;
    std::vector<Utterance> utterances;
    std::vector<std::string> speakers;

    double total_minutes() const;
    // Index of an utterance id; throws ContractError when absent.
    std::size_t index_of(const std::string& utterance_id) const;
    const Utterance& find(const std::string& utterance_id) const;
    std::vector<std::string> ids() const;
};

struct SyntheticConfig {
    int vocab_size = 67;
    int n_utterances = 500;
    int n_speakers = 1;
    double words_per_utterance_mean = 4.0;
    double sample_rate = 800.0;
    int channels = 8;
    double noise_sigma = 0.1;
    double warp = 0.15;
    double min_word_seconds = 0.4;
    double max_word_seconds = 0.6;
    double silence_seconds = 0.22;
    std::uint64_t seed = 0;
};

// 67 words around dates and times.
const std::vector<std::string>& builtin_vocabulary();

// First vocab_size words of the builtin list, then generated filler words.
std::vector<std::string> make_vocabulary(int vocab_size);

SpeakerProfile make_speaker(const SyntheticConfig& config, int speaker_index);

// Word-sequence source shared by every speaker. Successor lists are a
// function of the vocabulary size and the seed only.
class TranscriptModel {
   public:
    TranscriptModel(int vocab_size, double mean_words, std::uint64_t seed);
    std::vector<int> sample(std::uint64_t seed) const;
    const std::vector<int>& starts() const { return starts_; }
    const std::vector<std::vector<int>>& successors() const { return successors_; }

   private:
    double mean_words_;
    std::vector<int> starts_;
    std::vector<std::vector<int>> successors_;
};

// Renders a word-id sequence with a speaker profile. rng_seed drives warp,
// silence jitter and noise.
Tensor<float> render_utterance(const SpeakerProfile& speaker, const std::vector<int>& words,
                               const SyntheticConfig& config, std::uint64_t rng_seed);

CorpusManifest generate_synthetic_corpus(const SyntheticConfig& config);

// Writes manifest.jsonl, vocab.txt and signals/<utterance_id>.f32 under dir.
void save_corpus(const CorpusManifest& manifest, const std::filesystem::path& dir);

// Accepts the corpus directory or the manifest.jsonl path.
CorpusManifest load_corpus(const std::filesystem::path& path);

void write_f32(const std::filesystem::path& path, const Tensor<float>& matrix);
Tensor<float> read_f32(const std::filesystem::path& path, int cols);

struct FoldAssignment {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
};

// Utterance-random split. Test partitions of different folds are disjoint.
std::vector<FoldAssignment> split_folds(const CorpusManifest& manifest,
                                        std::array<double, 3> ratios, int k, std::uint64_t seed);

std::vector<std::string> subsample_minutes(const std::vector<std::string>& train_ids,
                                           const CorpusManifest& manifest, double minutes,
                                           std::uint64_t seed);

// Lowercase, drop ASCII punctuation (apostrophes included), collapse whitespace.
std::string normalize_transcript(std::string_view text);

std::vector<std::string> split_words(std::string_view text);

}  // namespace emgllm::corpus
