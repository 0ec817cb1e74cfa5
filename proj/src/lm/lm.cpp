// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "emgllm/lm/lm.hpp"

#include <cctype>
#include <set>
#include <sstream>

#include "emgllm/corpus/corpus.hpp"
#include "emgllm/error.hpp"

namespace emgllm::lm {

using namespace numerics;

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    tokens_ = {"<bos>", "<eos>", "<pad>", "<unk>"};
    for (const auto& w : words_) {
        if (w.empty() || w.find_first_of(" \t\n") != std::string::npos) {
            throw ParameterError("vocabulary word '" + w + "' is empty or contains whitespace");
        }
        if (index_.count(w) != 0 || (w.size() > 2 && w.front() == '<' && w.back() == '>')) {
            throw ParameterError("vocabulary word '" + w + "' is duplicated or reserved");
        }
        index_[w] = static_cast<int>(tokens_.size());
        tokens_.push_back(w);
    }
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) {
        throw ContractError("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(size()));
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::optional<int> Vocabulary::find(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) {
        return std::nullopt;
    }
    return it->second;
}

int Vocabulary::id(const std::string& word) const {
    if (auto i = find(word)) {
        return *i;
    }
    throw ContractError("out-of-vocabulary word '" + word + "'");
}

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab, bool allow_unk) {
    std::vector<int> ids;
    for (const auto& w : corpus::split_words(text)) {
        auto i = vocab.find(w);
        if (!i && !allow_unk) {
            throw ContractError("out-of-vocabulary word '" + w + "'");
        }
        ids.push_back(i ? *i : kUnk);
    }
    return ids;
}

std::string detokenize(std::span<const int> ids, const Vocabulary& vocab) {
    std::string out;
    for (int id : ids) {
        if (id == kBos || id == kEos || id == kPad) {
            continue;
        }
        if (!out.empty()) {
            out += ' ';
        }
        out += vocab.token(id);
    }
    return out;
}

std::vector<std::string> split_prompt(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            flush();
        } else if (std::ispunct(c)) {
            flush();
            out.emplace_back(1, ch);
        } else {
            cur += ch;
        }
    }
    flush();
    return out;
}

std::vector<std::string> PromptTemplate::reserved_tokens() const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& list : {p1_tokens(), p2_tokens()}) {
        for (const auto& t : list) {
            if (seen.insert(t).second) {
                out.push_back(t);
            }
        }
    }
    return out;
}

void TinyLmConfig::validate() const {
    if (vocab_size <= kSpecialCount) {
        throw ParameterError("lm vocab_size must exceed the 4 special tokens");
    }
    if (embed_dim < 1 || layers < 0 || heads < 1 || ff_dim < 1 || max_seq_len < 1) {
        throw ParameterError("lm dimensions must be positive");
    }
    if (embed_dim % heads != 0 || (embed_dim / heads) % 2 != 0) {
        throw ParameterError("lm heads (" + std::to_string(heads) + ") must divide embed_dim (" +
                             std::to_string(embed_dim) + ") into even head sizes");
    }
}

template <typename T>
TinyLm<T>::TinyLm(const TinyLmConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(derive_seed(seed, "lm"));
    const int f = config_.embed_dim;
    const int rows = config_.vocab_size + static_cast<int>(config_.prompt_tokens.size());
    table_ = params_.add("lm.embed", init_tensor<T>({rows, f}, f, Init::Normal002, rng));
    for (int l = 0; l < config_.layers; ++l) {
        Block b;
        b.tf = add_transformer_block(params_, "lm.layer" + std::to_string(l), f, config_.ff_dim,
                                     false, rng, Init::Normal002);
        blocks_.push_back(std::move(b));
    }
    final_norm_ = add_norm(params_, "lm.final_norm", f);
    head_ = add_linear(params_, "lm.head", f, config_.vocab_size, false, rng, Init::Normal002);
}

template <typename T>
int TinyLm<T>::prompt_id(const std::string& token) const {
    const auto& toks = config_.prompt_tokens;
    for (std::size_t i = 0; i < toks.size(); ++i) {
        if (toks[i] == token) {
            return config_.vocab_size + static_cast<int>(i);
        }
    }
    throw ContractError("prompt token '" + token + "' has no reserved id in this LM");
}

template <typename T>
std::vector<int> TinyLm<T>::prompt_ids(const std::vector<std::string>& tokens) const {
    std::vector<int> out;
    for (const auto& t : tokens) {
        out.push_back(prompt_id(t));
    }
    return out;
}

template <typename T>
Var<T> TinyLm<T>::embed(Tape<T>& tape, std::span<const int> ids) {
    return embedding(tape.param(params_[table_]), ids);
}

template <typename T>
Tensor<T> TinyLm<T>::embedding_rows(std::span<const int> ids) const {
    const Tensor<T>& table = params_[table_].value;
    const int f = config_.embed_dim;
    Tensor<T> out({static_cast<int>(ids.size()), f});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table.rows()) {
            throw ContractError("embedding id " + std::to_string(ids[i]) + " out of range");
        }
        auto src = table.row(ids[i]);
        std::copy(src.begin(), src.end(), out.row(static_cast<int>(i)).begin());
    }
    return out;
}

template <typename T>
Var<T> TinyLm<T>::project(Tape<T>& tape, const Block& b, const std::string& which,
                          const LinearLayer& l, Var<T> x) {
    auto y = apply(tape, params_, l, x);
    auto it = b.lora.find(which);
    if (it == b.lora.end()) {
        return y;
    }
    const T s = static_cast<T>(lora_->alpha / lora_->rank);
    auto delta = matmul(matmul(x, tape.param(params_[it->second.a])), tape.param(params_[it->second.b]));
    return add(y, scale(delta, s));
}

template <typename T>
Tensor<T> TinyLm<T>::project_value(const Block& b, const std::string& which, const LinearLayer& l,
                                   const Tensor<T>& x) const {
    Tensor<T> y = kernels::linear(x, params_[l.w].value, static_cast<const Tensor<T>*>(nullptr));
    auto it = b.lora.find(which);
    if (it == b.lora.end()) {
        return y;
    }
    const T s = static_cast<T>(lora_->alpha / lora_->rank);
    Tensor<T> delta = kernels::matmul(kernels::matmul(x, params_[it->second.a].value),
                                      params_[it->second.b].value);
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] += delta[i] * s;
    }
    return y;
}

template <typename T>
Var<T> TinyLm<T>::hidden(Tape<T>& tape, Var<T> inputs) {
    if (inputs.cols() != config_.embed_dim) {
        throw ContractError("lm input width " + std::to_string(inputs.cols()) +
                            " does not match embed_dim " + std::to_string(config_.embed_dim));
    }
    if (inputs.rows() > config_.max_seq_len) {
        throw ContractError("lm input of " + std::to_string(inputs.rows()) +
                            " rows exceeds max_seq_len " + std::to_string(config_.max_seq_len));
    }
    auto& ps = params_;
    Var<T> x = inputs;
    for (const auto& b : blocks_) {
        auto h = apply(tape, ps, b.tf.ln1, x);
        auto q = rotary(project(tape, b, "q", b.tf.q, h), config_.heads);
        auto k = rotary(project(tape, b, "k", b.tf.k, h), config_.heads);
        auto v = project(tape, b, "v", b.tf.v, h);
        x = add(x, project(tape, b, "o", b.tf.o, attention(q, k, v, config_.heads, true)));
        auto f = gelu(apply(tape, ps, b.tf.ff1, apply(tape, ps, b.tf.ln2, x)));
        x = add(x, apply(tape, ps, b.tf.ff2, f));
    }
    return apply(tape, ps, final_norm_, x);
}

template <typename T>
Var<T> TinyLm<T>::logits_from_hidden(Tape<T>& tape, Var<T> hidden_states) {
    return apply(tape, params_, head_, hidden_states);
}

template <typename T>
typename TinyLm<T>::Cache TinyLm<T>::new_cache() const {
    Cache c;
    c.keys.assign(blocks_.size(), Tensor<T>({0, config_.embed_dim}));
    c.values.assign(blocks_.size(), Tensor<T>({0, config_.embed_dim}));
    return c;
}

template <typename T>
Tensor<T> TinyLm<T>::infer(const Tensor<T>& rows, Cache& cache) const {
    const int f = config_.embed_dim;
    const int n = rows.rows();
    if (rows.cols() != f) {
        throw ContractError("lm input width mismatch in infer");
    }
    if (cache.length + n > config_.max_seq_len) {
        throw ContractError("lm input of " + std::to_string(cache.length + n) +
                            " rows exceeds max_seq_len " + std::to_string(config_.max_seq_len));
    }
    auto append = [f](Tensor<T>& dst, const Tensor<T>& src) {
        dst.storage().insert(dst.storage().end(), src.storage().begin(), src.storage().end());
        dst.reshape({static_cast<int>(dst.size()) / f, f});
    };
    auto norm = [&](const NormLayer& l, const Tensor<T>& x) {
        return kernels::layer_norm(x, params_[l.gain].value, params_[l.bias].value, T(1e-5));
    };
    Tensor<T> x = rows;
    for (std::size_t li = 0; li < blocks_.size(); ++li) {
        const Block& b = blocks_[li];
        const Tensor<T> h = norm(b.tf.ln1, x);
        const Tensor<T> q = kernels::rotary(project_value(b, "q", b.tf.q, h), config_.heads, cache.length);
        append(cache.keys[li], kernels::rotary(project_value(b, "k", b.tf.k, h), config_.heads, cache.length));
        append(cache.values[li], project_value(b, "v", b.tf.v, h));
        const Tensor<T> att = kernels::attention(q, cache.keys[li], cache.values[li], config_.heads,
                                                 true, cache.length);
        const Tensor<T> o = project_value(b, "o", b.tf.o, att);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] += o[i];
        }
        Tensor<T> ff = kernels::linear(norm(b.tf.ln2, x), params_[b.tf.ff1.w].value, static_cast<const Tensor<T>*>(nullptr));
        for (auto& v : ff.values()) {
            v = kernels::gelu(v);
        }
        const Tensor<T> ff2 = kernels::linear(ff, params_[b.tf.ff2.w].value, static_cast<const Tensor<T>*>(nullptr));
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] += ff2[i];
        }
    }
    cache.length += n;
    return kernels::linear(norm(final_norm_, x), params_[head_.w].value, static_cast<const Tensor<T>*>(nullptr));
}

template <typename T>
void TinyLm<T>::freeze() {
    params_.set_trainable(false);
}

template <typename T>
bool TinyLm<T>::frozen() const {
    for (const auto& p : params_) {
        if (p.trainable) {
            return false;
        }
    }
    return true;
}

template <typename T>
void TinyLm<T>::apply_lora(const LoraConfig& lora, std::uint64_t seed) {
    if (lora_) {
        throw ContractError("LoRA already applied to this LM");
    }
    const int f = config_.embed_dim;
    if (lora.rank < 1 || lora.rank > f) {
        throw ParameterError("LoRA rank " + std::to_string(lora.rank) + " must lie in [1, " +
                             std::to_string(f) + "]");
    }
    for (const auto& t : lora.targets) {
        if (t != "q" && t != "k" && t != "v" && t != "o") {
            throw ParameterError("unknown LoRA target '" + t + "' (expected q|k|v|o)");
        }
    }
    params_.set_trainable(false);
    Rng rng(derive_seed(seed, "lora"));
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        for (const auto& t : lora.targets) {
            const std::string name = "lm.layer" + std::to_string(l) + ".attn." + t;
            LoraPair pair;
            pair.a = params_.add(name + ".lora_a",
                                 init_tensor<T>({f, lora.rank}, f, Init::FanInUniform, rng));
            pair.b = params_.add(name + ".lora_b", Tensor<T>({lora.rank, f}));
            blocks_[l].lora[t] = pair;
        }
    }
    lora_ = lora;
}

template <typename T>
Assembled<T> assemble_input(Tape<T>& tape, const PromptTemplate& prompt, Var<T> embeddings,
                            const std::optional<std::vector<int>>& target, TinyLm<T>& lm) {
    if (embeddings.cols() != lm.config().embed_dim) {
        throw ContractError("embedding width " + std::to_string(embeddings.cols()) +
                            " does not match LM embed_dim " + std::to_string(lm.config().embed_dim));
    }
    if (target && target->empty()) {
        throw ContractError("assemble_input: empty target in training mode");
    }
    const auto p1 = lm.prompt_ids(prompt.p1_tokens());
    const auto p2 = lm.prompt_ids(prompt.p2_tokens());
    std::vector<int> tail = {kBos};
    if (target) {
        tail.insert(tail.end(), target->begin(), target->end());
    }
    Assembled<T> out;
    out.emg_begin = static_cast<int>(p1.size());
    std::vector<Var<T>> parts;
    if (!p1.empty()) {
        parts.push_back(lm.embed(tape, p1));
    }
    parts.push_back(embeddings);
    if (!p2.empty()) {
        parts.push_back(lm.embed(tape, p2));
    }
    parts.push_back(lm.embed(tape, tail));
    out.input = concat_rows(parts);
    if (target) {
        const int bos = out.emg_begin + embeddings.rows() + static_cast<int>(p2.size());
        for (std::size_t i = 0; i <= target->size(); ++i) {
            out.loss_positions.push_back(bos + static_cast<int>(i));
            out.loss_targets.push_back(i < target->size() ? (*target)[i] : kEos);
        }
    }
    return out;
}

template <typename T>
Tensor<T> inference_prefix(const PromptTemplate& prompt, const Tensor<T>& embeddings,
                           const TinyLm<T>& lm) {
    const int f = lm.config().embed_dim;
    if (embeddings.cols() != f) {
        throw ContractError("embedding width " + std::to_string(embeddings.cols()) +
                            " does not match LM embed_dim " + std::to_string(f));
    }
    const Tensor<T> p1 = lm.embedding_rows(lm.prompt_ids(prompt.p1_tokens()));
    const Tensor<T> p2 = lm.embedding_rows(lm.prompt_ids(prompt.p2_tokens()));
    const std::vector<int> bos = {kBos};
    const Tensor<T> b = lm.embedding_rows(bos);
    Tensor<T> out({p1.rows() + embeddings.rows() + p2.rows() + 1, f});
    auto it = out.storage().begin();
    for (const Tensor<T>* part : {&p1, &embeddings, &p2, &b}) {
        it = std::copy(part->storage().begin(), part->storage().end(), it);
    }
    return out;
}

template class TinyLm<float>;
template class TinyLm<double>;
template Assembled<float> assemble_input<float>(Tape<float>&, const PromptTemplate&, Var<float>,
                                                const std::optional<std::vector<int>>&, TinyLm<float>&);
template Assembled<double> assemble_input<double>(Tape<double>&, const PromptTemplate&, Var<double>,
                                                  const std::optional<std::vector<int>>&,
                                                  TinyLm<double>&);
template Tensor<float> inference_prefix<float>(const PromptTemplate&, const Tensor<float>&,
                                               const TinyLm<float>&);
template Tensor<double> inference_prefix<double>(const PromptTemplate&, const Tensor<double>&,
                                                 const TinyLm<double>&);

std::int64_t decoder_param_count(const DecoderShape& s) {
    const std::int64_t kv_dim = s.dim * s.kv_heads / s.heads;
    const std::int64_t attn = 2 * s.dim * s.dim + 2 * s.dim * kv_dim;
    const std::int64_t mlp = s.ff_matrices * s.dim * s.ff_dim;
    const std::int64_t norms = 2 * s.norm_vectors * s.dim;
    const std::int64_t embed = (s.vocab + s.input_only_rows) * s.dim;
    const std::int64_t head = s.tied_embeddings ? 0 : s.vocab * s.dim;
    return embed + s.layers * (attn + mlp + norms) + s.norm_vectors * s.dim + head;
}

std::int64_t lora_param_count(const DecoderShape& s, const LoraConfig& lora) {
    const std::int64_t kv_dim = s.dim * s.kv_heads / s.heads;
    std::int64_t per_layer = 0;
    for (const auto& t : lora.targets) {
        const std::int64_t out = (t == "k" || t == "v") ? kv_dim : s.dim;
        per_layer += static_cast<std::int64_t>(lora.rank) * (s.dim + out);
    }
    return s.layers * per_layer;
}

}  // namespace emgllm::lm
