// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include "emgllm/error.hpp"
#include "emgllm/lm/lm.hpp"
#include "emgllm/numerics/archive.hpp"
#include "emgllm/numerics/schedule.hpp"
#include "emgllm/objective/objective.hpp"

namespace emgllm::lm {

using namespace numerics;
using Json = nlohmann::json;

namespace {

std::vector<int> with_bos(const std::vector<int>& seq) {
    std::vector<int> ids = {kBos};
    ids.insert(ids.end(), seq.begin(), seq.end());
    return ids;
}

std::vector<int> with_eos(const std::vector<int>& seq) {
    std::vector<int> ids = seq;
    ids.push_back(kEos);
    return ids;
}

double rms(const Tensor<float>& t) {
    double s = 0;
    for (float v : t.values()) {
        s += static_cast<double>(v) * v;
    }
    return std::sqrt(s / static_cast<double>(std::max<std::size_t>(t.size(), 1)));
}

}  // namespace

double heldout_loss(TinyLm<float>& lm, const std::vector<std::vector<int>>& sequences) {
    double total = 0;
    std::size_t tokens = 0;
    for (const auto& seq : sequences) {
        Tape<float> tape(false);
        const auto in = with_bos(seq);
        const auto target = with_eos(seq);
        auto logits = lm.forward(tape, lm.embed(tape, in));
        total += objective::ce_temperature_loss(logits, target, 1.0f).value()[0];
        tokens += target.size();
    }
    if (tokens == 0) {
        throw ContractError("heldout_loss: no sequences");
    }
    return total / static_cast<double>(tokens);
}

PretrainReport pretrain_lm(TinyLm<float>& lm, const std::vector<std::vector<int>>& train,
                           const std::vector<std::vector<int>>& heldout, const PromptTemplate& prompt,
                           const PretrainConfig& config) {
    if (train.empty()) {
        throw ParameterError("pretrain_lm: empty transcript set");
    }
    for (const auto& seq : train) {
        for (int id : seq) {
            if (id < kSpecialCount || id >= lm.config().vocab_size) {
                throw ContractError("pretrain_lm: transcript token " + std::to_string(id) +
                                    " is not a vocabulary word");
            }
        }
    }
    if (config.steps < 0 || config.batch_size < 1 || config.min_repeat < 1 ||
        config.max_repeat < config.min_repeat || config.min_gap < 0 || config.max_gap < config.min_gap) {
        throw ParameterError("pretrain_lm: invalid step, batch, repeat or gap settings");
    }
    PretrainReport report;
    if (!heldout.empty()) {
        report.initial_heldout_loss = heldout_loss(lm, heldout);
    }
    auto& ps = lm.params();
    ps.set_trainable(true);
    Rng rng(derive_seed(config.seed, "pretrain"));
    std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> repeat(config.min_repeat, config.max_repeat);
    std::uniform_int_distribution<int> gap(config.min_gap, config.max_gap);
    AdamWConfig opt;
    opt.weight_decay = config.weight_decay;
    double window = 0;
    std::size_t window_tokens = 0;
    for (int step = 0; step < config.steps; ++step) {
        std::vector<const std::vector<int>*> batch;
        std::size_t tokens = 0;
        for (int b = 0; b < config.batch_size; ++b) {
            batch.push_back(&train[pick(rng)]);
            tokens += batch.back()->size() + 1;
        }
        ps.zero_grad();
        const float inv = 1.0f / static_cast<float>(tokens);
        for (const auto* seq : batch) {
            Tape<float> tape;
            std::vector<int> noisy = *seq;
            for (auto& w : noisy) {
                if (unit(rng) < config.word_dropout) {
                    w = kUnk;
                }
            }
            Var<float> loss;
            if (unit(rng) < config.rehearsal_fraction) {
                std::vector<int> stretched;
                for (int w : *seq) {
                    stretched.insert(stretched.end(), static_cast<std::size_t>(gap(rng)), kPad);
                    stretched.insert(stretched.end(), static_cast<std::size_t>(repeat(rng)), w);
                }
                stretched.insert(stretched.end(), static_cast<std::size_t>(gap(rng)), kPad);
                const double sigma = config.noise * rms(ps.get("lm.embed").value);
                const float jitter = static_cast<float>(1.0 + config.scale_jitter * (2 * unit(rng) - 1));
                const int f = lm.config().embed_dim;
                auto noise = normal_tensor<float>({static_cast<int>(stretched.size()), f}, sigma, rng);
                auto e = add(scale(lm.embed(tape, stretched), jitter), tape.constant(std::move(noise)));
                auto in = assemble_input<float>(tape, prompt, e, noisy, lm);
                auto h = lm.forward(tape, in.input);
                loss = objective::ce_temperature_loss(select_rows(h, in.loss_positions),
                                                      with_eos(*seq), 1.0f);
            } else {
                const auto in = with_bos(noisy);
                loss = objective::ce_temperature_loss(lm.forward(tape, lm.embed(tape, in)),
                                                      with_eos(*seq), 1.0f);
            }
            window += loss.value()[0];
            tape.backward(scale(loss, inv));
        }
        window_tokens += tokens;
        if (!std::isfinite(window)) {
            throw NumericError("pretrain_lm: non-finite loss at step " + std::to_string(step));
        }
        clip_grad_norm(ps, config.clip_norm);
        opt.lr = scheduled_lr(step, config.steps, config.lr, config.warmup_fraction);
        adamw_step(ps, opt);
        if ((step + 1) % 100 == 0 || step + 1 == config.steps) {
            report.train_loss.push_back(window / static_cast<double>(window_tokens));
            window = 0;
            window_tokens = 0;
        }
    }
    lm.freeze();
    ps.zero_grad();
    if (!heldout.empty()) {
        report.final_heldout_loss = heldout_loss(lm, heldout);
    }
    return report;
}

namespace {

Json config_json(const TinyLmConfig& c) {
    return {{"vocab_size", c.vocab_size}, {"embed_dim", c.embed_dim}, {"layers", c.layers},
            {"heads", c.heads},           {"ff_dim", c.ff_dim},       {"max_seq_len", c.max_seq_len},
            {"prompt_tokens", c.prompt_tokens}};
}

}  // namespace

void save_lm(const TinyLm<float>& lm, const PromptTemplate& prompt, const Vocabulary& vocab,
             const std::filesystem::path& manifest_path) {
    Archive a;
    a.meta["kind"] = "tiny_lm";
    a.meta["config"] = config_json(lm.config());
    a.meta["prompt"] = {{"p1_text", prompt.p1_text}, {"p2_text", prompt.p2_text}};
    a.meta["vocabulary"] = vocab.words();
    a.meta["frozen"] = lm.frozen();
    if (lm.lora()) {
        a.meta["lora"] = {{"rank", lm.lora()->rank}, {"alpha", lm.lora()->alpha},
                          {"targets", lm.lora()->targets}};
    }
    append_parameters(a, lm.params(), "", false);
    save_archive(manifest_path, a);
}

LoadedLm load_lm(const std::filesystem::path& manifest_path) {
    const Archive a = load_archive(manifest_path);
    if (a.meta.value("kind", "") != "tiny_lm") {
        throw SchemaError(manifest_path.string() + " is not an LM checkpoint");
    }
    try {
        const Json& c = a.meta.at("config");
        TinyLmConfig cfg;
        cfg.vocab_size = c.at("vocab_size");
        cfg.embed_dim = c.at("embed_dim");
        cfg.layers = c.at("layers");
        cfg.heads = c.at("heads");
        cfg.ff_dim = c.at("ff_dim");
        cfg.max_seq_len = c.at("max_seq_len");
        cfg.prompt_tokens = c.at("prompt_tokens").get<std::vector<std::string>>();
        PromptTemplate prompt;
        prompt.p1_text = a.meta.at("prompt").at("p1_text");
        prompt.p2_text = a.meta.at("prompt").at("p2_text");
        Vocabulary vocab(a.meta.at("vocabulary").get<std::vector<std::string>>());
        TinyLm<float> lm(cfg, 0);
        if (a.meta.contains("lora")) {
            LoraConfig l;
            l.rank = a.meta["lora"].at("rank");
            l.alpha = a.meta["lora"].at("alpha");
            l.targets = a.meta["lora"].at("targets").get<std::vector<std::string>>();
            lm.apply_lora(l, 0);
        }
        restore_parameters(a, lm.params(), "", false);
        if (a.meta.value("frozen", false)) {
            lm.freeze();
        }
        return LoadedLm{std::move(lm), prompt, std::move(vocab)};
    } catch (const Json::exception& e) {
        throw SchemaError(manifest_path.string() + ": malformed LM metadata (" + e.what() + ")");
    }
}

}  // namespace emgllm::lm
