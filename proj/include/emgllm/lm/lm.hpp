// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "emgllm/numerics/layers.hpp"

namespace emgllm::lm {

using numerics::ParameterSet;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

inline constexpr int kBos = 0;
inline constexpr int kEos = 1;
inline constexpr int kPad = 2;
inline constexpr int kUnk = 3;
inline constexpr int kSpecialCount = 4;

class Vocabulary {
   public:
    explicit Vocabulary(std::vector<std::string> words);

    int size() const noexcept { return static_cast<int>(tokens_.size()); }
    int word_count() const noexcept { return size() - kSpecialCount; }
    const std::vector<std::string>& words() const noexcept { return words_; }
    const std::string& token(int id) const;
    std::optional<int> find(const std::string& word) const;
    int id(const std::string& word) const;  // throws for OOV
    static bool is_special(int id) noexcept { return id >= 0 && id < kSpecialCount; }

   private:
    std::vector<std::string> words_;
    std::vector<std::string> tokens_;
    std::map<std::string, int> index_;
};

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab, bool allow_unk = false);
// BOS, EOS and PAD are dropped; UNK prints as <unk>.
std::string detokenize(std::span<const int> ids, const Vocabulary& vocab);

// Prompt text splits into words and single punctuation marks: "EMG:" -> "EMG", ":".
std::vector<std::string> split_prompt(const std::string& text);

struct PromptTemplate {
    std::string p1_text = "Unvoiced EMG:";
    std::string p2_text = "Prompt: Convert unvoiced EMG embeddings to text.";

    std::vector<std::string> p1_tokens() const { return split_prompt(p1_text); }
    std::vector<std::string> p2_tokens() const { return split_prompt(p2_text); }
    // Distinct prompt tokens in order of first appearance (P1 then P2).
    std::vector<std::string> reserved_tokens() const;
};

struct TinyLmConfig {
    int vocab_size = 71;
    int embed_dim = 64;
    int layers = 4;
    int heads = 4;
    int ff_dim = 256;
    int max_seq_len = 512;
    // Input-only ids vocab_size, vocab_size + 1, ... in this order.
    std::vector<std::string> prompt_tokens = PromptTemplate{}.reserved_tokens();

    void validate() const;
};

struct LoraConfig {
    int rank = 4;
    double alpha = 8.0;
    std::vector<std::string> targets = {"q", "v"};
};

// Decoder-only pre-norm transformer with rotary positions and causal attention.
template <typename T>
class TinyLm {
   public:
    TinyLm(const TinyLmConfig& config, std::uint64_t seed);

    const TinyLmConfig& config() const noexcept { return config_; }
    ParameterSet<T>& params() noexcept { return params_; }
    const ParameterSet<T>& params() const noexcept { return params_; }

    int prompt_id(const std::string& token) const;
    std::vector<int> prompt_ids(const std::vector<std::string>& tokens) const;

    Var<T> embed(Tape<T>& tape, std::span<const int> ids);
    Tensor<T> embedding_rows(std::span<const int> ids) const;

    // Final-norm hidden states [S x F] and logits [S x |V|].
    Var<T> hidden(Tape<T>& tape, Var<T> inputs);
    Var<T> logits_from_hidden(Tape<T>& tape, Var<T> hidden_states);
    Var<T> forward(Tape<T>& tape, Var<T> inputs) { return logits_from_hidden(tape, hidden(tape, inputs)); }

    // Incremental decoding: keys/values of every processed row, per layer.
    struct Cache {
        std::vector<Tensor<T>> keys, values;
        int length = 0;
    };
    Cache new_cache() const;
    // Appends rows to the cache and returns their logits [rows x |V|].
    Tensor<T> infer(const Tensor<T>& rows, Cache& cache) const;

    void freeze();  // every tensor currently in the model
    bool frozen() const;

    void apply_lora(const LoraConfig& lora, std::uint64_t seed);
    bool has_lora() const noexcept { return lora_.has_value(); }
    const std::optional<LoraConfig>& lora() const noexcept { return lora_; }

    std::int64_t param_count(bool trainable_only) const { return params_.count(trainable_only); }

   private:
    struct LoraPair {
        int a = -1;
        int b = -1;
    };
    struct Block {
        numerics::TransformerBlock tf;
        std::map<std::string, LoraPair> lora;
    };

    Var<T> project(Tape<T>& tape, const Block& b, const std::string& which,
                   const numerics::LinearLayer& l, Var<T> x);
    Tensor<T> project_value(const Block& b, const std::string& which, const numerics::LinearLayer& l,
                            const Tensor<T>& x) const;

    TinyLmConfig config_;
    ParameterSet<T> params_;
    int table_ = -1;
    std::vector<Block> blocks_;
    numerics::NormLayer final_norm_;
    numerics::LinearLayer head_;
    std::optional<LoraConfig> lora_;
};

// P1 ++ E ++ P2 ++ BOS (++ target in training form).  With target == nullopt the
// inference form ends after BOS and the mask is empty.
template <typename T>
struct Assembled {
    Var<T> input;
    std::vector<int> loss_positions;
    std::vector<int> loss_targets;
    int emg_begin = 0;
};

template <typename T>
Assembled<T> assemble_input(Tape<T>& tape, const PromptTemplate& prompt, Var<T> embeddings,
                            const std::optional<std::vector<int>>& target, TinyLm<T>& lm);

// Prompt-only prefix [P1 ++ E ++ P2 ++ BOS] as a plain matrix for decoding.
template <typename T>
Tensor<T> inference_prefix(const PromptTemplate& prompt, const Tensor<T>& embeddings,
                           const TinyLm<T>& lm);

struct PretrainConfig {
    int steps = 4000;
    int batch_size = 16;
    double lr = 1e-3;
    double weight_decay = 0.1;
    double warmup_fraction = 0.05;
    double clip_norm = 1.0;
    // Share of sequences that carry a stretched, noisy copy of the transcript's
    // word embeddings between P1 and P2 before the BOS-led transcript.
    double rehearsal_fraction = 0.75;
    int min_repeat = 4;
    int max_repeat = 12;
    int min_gap = 1;
    int max_gap = 6;
    double noise = 0.5;         // relative to the embedding table rms
    double scale_jitter = 0.3;  // uniform multiplicative jitter on the stretched block
    double word_dropout = 0.15;  // teacher-forced input words replaced by UNK
    std::uint64_t seed = 0;
};

struct PretrainReport {
    double initial_heldout_loss = 0;
    double final_heldout_loss = 0;
    std::vector<double> train_loss;  // mean per-token loss per logged window
};

// Mean per-token next-token loss of BOS + seq + EOS.
double heldout_loss(TinyLm<float>& lm, const std::vector<std::vector<int>>& sequences);

PretrainReport pretrain_lm(TinyLm<float>& lm, const std::vector<std::vector<int>>& train,
                           const std::vector<std::vector<int>>& heldout, const PromptTemplate& prompt,
                           const PretrainConfig& config);

// Analytic parameter counts for a Llama-style decoder (untied head unless tied).
struct DecoderShape {
    std::int64_t vocab = 128256;
    std::int64_t dim = 3072;
    std::int64_t layers = 28;
    std::int64_t heads = 24;
    std::int64_t kv_heads = 8;
    std::int64_t ff_dim = 8192;
    std::int64_t ff_matrices = 3;   // gated MLP; 2 for a plain MLP
    std::int64_t norm_vectors = 1;  // RMSNorm gain; 2 for LayerNorm gain + bias
    std::int64_t input_only_rows = 0;
    bool tied_embeddings = true;
};
std::int64_t decoder_param_count(const DecoderShape& shape);
std::int64_t lora_param_count(const DecoderShape& shape, const LoraConfig& lora);

void save_lm(const TinyLm<float>& lm, const PromptTemplate& prompt, const Vocabulary& vocab,
             const std::filesystem::path& manifest_path);
struct LoadedLm {
    TinyLm<float> lm;
    PromptTemplate prompt;
    Vocabulary vocab;
};
LoadedLm load_lm(const std::filesystem::path& manifest_path);

}  // namespace emgllm::lm
