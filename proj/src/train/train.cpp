// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "emgllm/train/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "emgllm/error.hpp"
#include "emgllm/numerics/archive.hpp"
#include "emgllm/numerics/schedule.hpp"
#include "emgllm/train/config_json.hpp"

namespace emgllm::train {

using namespace numerics;

void InputPipeline::fit(const corpus::CorpusManifest& corpus, const std::vector<std::string>& ids) {
    if (ids.empty()) {
        throw ContractError("InputPipeline::fit: no training utterances");
    }
    std::vector<Tensor<float>> mats;
    mats.reserve(ids.size());
    for (const auto& id : ids) {
        mats.push_back(unnormalized(corpus.find(id).recording));
    }
    std::vector<const Tensor<float>*> ptrs;
    for (const auto& m : mats) {
        ptrs.push_back(&m);
    }
    stats_ = signal::compute_column_stats(ptrs);
}

Tensor<float> InputPipeline::unnormalized(const corpus::EmgRecording& recording) const {
    corpus::EmgRecording r = signal::preprocess(recording, config_.target_rate, nullptr);
    if (config_.mode == adaptor::InputMode::Raw) {
        return std::move(r.signal);
    }
    return signal::extract_features(r, config_.frames).frames;
}

Tensor<float> InputPipeline::prepare(const corpus::EmgRecording& recording) const {
    Tensor<float> x = unnormalized(recording);
    if (!stats_.empty()) {
        signal::apply_column_stats(x, stats_);
    }
    return x;
}

int InputPipeline::input_dim(int channels) const {
    return config_.mode == adaptor::InputMode::Raw ? channels : channels * signal::kFeaturesPerChannel;
}

std::vector<Example> make_examples(const corpus::CorpusManifest& corpus,
                                   const std::vector<std::string>& ids, const InputPipeline& pipeline,
                                   const lm::Vocabulary& vocab) {
    std::vector<Example> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        Example e;
        e.utterance = &corpus.find(id);
        e.target = lm::tokenize(corpus::normalize_transcript(e.utterance->transcript), vocab);
        e.input = pipeline.prepare(e.utterance->recording);
        out.push_back(std::move(e));
    }
    return out;
}

EmgToText::EmgToText(const adaptor::AdaptorConfig& adaptor_config, const objective::LossSpec& loss,
                     lm::TinyLm<float>& lm, lm::PromptTemplate prompt, std::uint64_t seed)
    : adaptor_(adaptor_config, seed), loss_(loss), lm_(&lm), prompt_(std::move(prompt)) {
    loss_.validate();
    const int f = lm.config().embed_dim;
    if (adaptor_config.output_dim != f) {
        throw ParameterError("adaptor output_dim " + std::to_string(adaptor_config.output_dim) +
                             " must equal the LM embed_dim " + std::to_string(f));
    }
    const int vocab = lm.config().vocab_size;
    if (loss_.ctc_blank_id < 0) {
        loss_.ctc_blank_id = vocab;
    }
    if (loss_.kind == objective::LossKind::Ctc) {
        if (loss_.ctc_blank_id != vocab) {
            throw ParameterError("ctc_blank_id must be |V| = " + std::to_string(vocab));
        }
        Rng rng(derive_seed(seed, "ctc_head"));
        dilate_ = objective::add_dilation_conv(head_, "ctc.dilate", f, true, rng);
        // Vocabulary columns start from the LM head, the blank column from zero.
        ctc_out_ = add_linear(head_, "ctc.out", f, vocab + 1, true, rng);
        Tensor<float>& w = head_[ctc_out_.w].value;
        const Tensor<float>& lm_head = lm.params().get("lm.head.weight").value;
        for (int r = 0; r < f; ++r) {
            for (int c = 0; c <= vocab; ++c) {
                w.at(r, c) = c < vocab ? lm_head.at(r, c) : 0.0f;
            }
        }
        head_[ctc_out_.b].value.fill(0.0f);
    }
}

std::vector<ParameterSet<float>*> EmgToText::trainable_sets() {
    std::vector<ParameterSet<float>*> out = {&adaptor_.params()};
    if (head_.size() > 0) {
        out.push_back(&head_);
    }
    if (lm_->has_lora()) {
        out.push_back(&lm_->params());
    }
    return out;
}

std::int64_t EmgToText::trainable_count() {
    std::int64_t n = 0;
    for (auto* ps : trainable_sets()) {
        n += ps->count(true);
    }
    return n;
}

Var<float> EmgToText::ctc_frame_logits(Tape<float>& tape, Var<float> embeddings) {
    auto d = objective::dilate_embeddings(tape, head_, dilate_, embeddings, loss_.dilation_factor);
    const auto p1 = lm_->prompt_ids(prompt_.p1_tokens());
    const auto p2 = lm_->prompt_ids(prompt_.p2_tokens());
    std::vector<Var<float>> parts;
    if (!p1.empty()) {
        parts.push_back(lm_->embed(tape, p1));
    }
    parts.push_back(d);
    if (!p2.empty()) {
        parts.push_back(lm_->embed(tape, p2));
    }
    auto h = lm_->hidden(tape, concat_rows(parts));
    const int begin = static_cast<int>(p1.size());
    return apply(tape, head_, ctc_out_, slice_rows(h, begin, begin + d.rows()));
}

Var<float> EmgToText::loss(Tape<float>& tape, const Tensor<float>& input, const std::vector<int>& target) {
    auto e = adaptor_.forward(tape, input);
    if (loss_.kind == objective::LossKind::Ctc) {
        return objective::ctc_loss(ctc_frame_logits(tape, e), target, loss_.ctc_blank_id,
                                   loss_.ctc_length_policy);
    }
    auto in = lm::assemble_input<float>(tape, prompt_, e, target, *lm_);
    auto logits = lm_->forward(tape, in.input);
    return objective::ce_temperature_loss(select_rows(logits, in.loss_positions), in.loss_targets,
                                          static_cast<float>(loss_.tau));
}

decode::Transcription EmgToText::transcribe(const Tensor<float>& input, const lm::Vocabulary& vocab,
                                            const decode::DecodeConfig& config) {
    Tape<float> tape(false);
    auto e = adaptor_.forward(tape, input);
    if (loss_.kind == objective::LossKind::Ctc) {
        const Tensor<float> z = ctc_frame_logits(tape, e).value();
        const auto ids = objective::ctc_greedy_decode(z, loss_.ctc_blank_id);
        const Tensor<float> lp = kernels::log_softmax_rows(z, 1.0f);
        double best = 0;
        for (int t = 0; t < lp.rows(); ++t) {
            auto row = lp.row(t);
            best += *std::max_element(row.begin(), row.end());
        }
        return {lm::detokenize(ids, vocab), best};
    }
    const Tensor<float> prefix = lm::inference_prefix(prompt_, e.value(), *lm_);
    const auto hyps = decode::beam_search(*lm_, prefix, config);
    const auto tokens = decode::strip_eos(hyps.front().tokens);
    return {lm::detokenize(tokens, vocab), hyps.front().log_prob};
}

Tensor<float> EmgToText::unprompted_logits(const Tensor<float>& input) {
    Tape<float> tape(false);
    return lm_->forward(tape, adaptor_.forward(tape, input)).value();
}

void TrainConfig::validate() const {
    if (!(lr_max > 0)) {
        throw ParameterError("train lr_max must be > 0");
    }
    if (batch_size < 1 || max_epochs < 0 || patience < 0 || val_wer_every < 0) {
        throw ParameterError("train batch_size must be >= 1 and epoch counts >= 0");
    }
    if (warmup_fraction < 0 || warmup_fraction >= 1 || clip_norm <= 0) {
        throw ParameterError("train warmup_fraction must lie in [0, 1) and clip_norm > 0");
    }
    loss.validate();
}

double mean_loss(EmgToText& model, const std::vector<Example>& examples) {
    if (examples.empty()) {
        return 0;
    }
    double total = 0;
    for (const auto& e : examples) {
        Tape<float> tape(false);
        total += model.loss(tape, e.input, e.target).value()[0];
    }
    return total / static_cast<double>(examples.size());
}

decode::SplitReport evaluate_examples(EmgToText& model, const std::vector<Example>& examples,
                                      const lm::Vocabulary& vocab, const decode::DecodeConfig& config) {
    std::map<std::string, const Example*> by_id;
    std::vector<decode::EvalItem> items;
    for (const auto& e : examples) {
        by_id[e.id()] = &e;
        items.push_back({e.id(), e.utterance->transcript});
    }
    decode::Transcriber t = [&](const std::string& id) {
        return model.transcribe(by_id.at(id)->input, vocab, config);
    };
    return decode::evaluate_split({items}, {t});
}

namespace {

using Snapshot = std::vector<std::vector<Tensor<float>>>;

Snapshot snapshot(const std::vector<ParameterSet<float>*>& sets) {
    Snapshot s;
    for (const auto* ps : sets) {
        std::vector<Tensor<float>> v;
        for (const auto& p : *ps) {
            v.push_back(p.value);
        }
        s.push_back(std::move(v));
    }
    return s;
}

void restore(const std::vector<ParameterSet<float>*>& sets, const Snapshot& s) {
    for (std::size_t i = 0; i < sets.size(); ++i) {
        std::size_t j = 0;
        for (auto& p : *sets[i]) {
            p.value = s[i][j++];
        }
    }
}

// Frozen LM tensors (everything except LoRA deltas).
std::vector<Tensor<float>> frozen_lm_tensors(const lm::TinyLm<float>& lm) {
    std::vector<Tensor<float>> out;
    for (const auto& p : lm.params()) {
        if (p.name.find(".lora_") == std::string::npos) {
            out.push_back(p.value);
        }
    }
    return out;
}

}  // namespace

TrainResult train_run(EmgToText& model, const std::vector<Example>& train,
                      const std::vector<Example>& val, const TrainConfig& config,
                      const decode::DecodeConfig& decode_config, const lm::Vocabulary& vocab,
                      const EpochCallback& on_epoch) {
    config.validate();
    if (train.empty()) {
        throw ContractError("train_run: empty training set");
    }
    for (const auto& p : model.lm().params()) {
        if (p.trainable && p.name.find(".lora_") == std::string::npos) {
            throw ContractError("train_run: LM tensor '" + p.name + "' is not frozen");
        }
    }
    const auto lm_before = frozen_lm_tensors(model.lm());
    auto sets = model.trainable_sets();
    TrainResult result;
    auto evaluate_val = [&] { return val.empty() ? mean_loss(model, train) : mean_loss(model, val); };
    result.initial_val_loss = evaluate_val();
    result.best_val_loss = result.initial_val_loss;
    Snapshot best = snapshot(sets);

    const auto n = static_cast<std::int64_t>(train.size());
    const std::int64_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
    const std::int64_t total_steps = steps_per_epoch * config.max_epochs;
    Rng rng(derive_seed(config.seed, "shuffle"));
    std::vector<std::size_t> order(train.size());
    AdamWConfig opt;
    opt.weight_decay = config.weight_decay;
    int since_best = 0;
    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0;
        for (std::int64_t step = 0; step < steps_per_epoch; ++step) {
            const auto begin = static_cast<std::size_t>(step * config.batch_size);
            const auto end = std::min(train.size(), begin + static_cast<std::size_t>(config.batch_size));
            for (auto* ps : sets) {
                ps->zero_grad();
            }
            const float inv = 1.0f / static_cast<float>(end - begin);
            for (std::size_t i = begin; i < end; ++i) {
                const Example& ex = train[order[i]];
                Tape<float> tape;
                auto loss = model.loss(tape, ex.input, ex.target);
                const double value = loss.value()[0];
                if (!std::isfinite(value)) {
                    throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                       std::to_string(result.optimizer_steps) + ", batch " +
                                       std::to_string(step) + " (utterance " + ex.id() + ")");
                }
                epoch_loss += value;
                tape.backward(scale(loss, inv));
            }
            double norm2 = 0;
            for (auto* ps : sets) {
                const double g = grad_norm(*ps);
                norm2 += g * g;
            }
            const double norm = std::sqrt(norm2);
            if (!std::isfinite(norm)) {
                throw NumericError("non-finite gradient at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(step));
            }
            if (norm > config.clip_norm) {
                const auto factor = static_cast<float>(config.clip_norm / norm);
                for (auto* ps : sets) {
                    for (auto& p : *ps) {
                        if (p.trainable && p.has_grad) {
                            for (auto& g : p.grad.values()) {
                                g *= factor;
                            }
                        }
                    }
                }
            }
            opt.lr = scheduled_lr(result.optimizer_steps, total_steps, config.lr_max,
                                  config.warmup_fraction, config.lr_floor_ratio);
            for (auto* ps : sets) {
                adamw_step(*ps, opt);
            }
            ++result.optimizer_steps;
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = epoch_loss / static_cast<double>(n);
        rec.val_loss = evaluate_val();
        if (!std::isfinite(rec.val_loss)) {
            throw NumericError("non-finite validation loss after epoch " + std::to_string(epoch));
        }
        if (config.val_wer_every > 0 && !val.empty() &&
            (epoch % config.val_wer_every == 0 || epoch == config.max_epochs)) {
            rec.val_wer = evaluate_examples(model, val, vocab, decode_config).wer_mean;
        }
        if (rec.val_loss < result.best_val_loss) {
            result.best_val_loss = rec.val_loss;
            result.best_epoch = epoch;
            best = snapshot(sets);
            since_best = 0;
        } else {
            ++since_best;
        }
        result.history.push_back(rec);
        if (on_epoch) {
            on_epoch(rec);
        }
        if (config.patience > 0 && since_best >= config.patience) {
            break;
        }
    }
    restore(sets, best);
    for (auto* ps : sets) {
        ps->zero_grad();
    }
    result.lm_unchanged = frozen_lm_tensors(model.lm()) == lm_before;
    return result;
}

namespace {

Json stats_json(const signal::ColumnStats& s) { return {{"mean", s.mean}, {"stddev", s.stddev}}; }

}  // namespace

void save_checkpoint(const std::filesystem::path& manifest_path, EmgToText& model,
                     const InputPipeline& pipeline, const CheckpointInfo& info) {
    Archive a;
    a.meta["kind"] = "emg_checkpoint";
    a.meta["checkpoint_version"] = kCheckpointVersion;
    a.meta["adaptor"] = to_json(model.adaptor().config());
    a.meta["loss"] = to_json(model.loss_spec());
    a.meta["pipeline"] = to_json(pipeline.config());
    a.meta["pipeline_stats"] = stats_json(pipeline.stats());
    if (model.lm().lora()) {
        a.meta["lora"] = to_json(*model.lm().lora());
    }
    a.meta["run_config"] = info.run_config;
    a.meta["epoch"] = info.epoch;
    a.meta["best_val_loss"] = info.best_val_loss;
    a.meta["best_val_wer"] = info.best_val_wer ? Json(*info.best_val_wer) : Json(nullptr);
    a.meta["step_count"] = model.adaptor().params().step_count();
    append_parameters(a, model.adaptor().params(), "", true);
    append_parameters(a, model.head_params(), "", true);
    if (model.lm().has_lora()) {
        ParameterSet<float> lora;
        for (const auto& p : model.lm().params()) {
            if (p.name.find(".lora_") != std::string::npos) {
                const int h = lora.add(p.name, p.value);
                lora[h].adam_m = p.adam_m;
                lora[h].adam_v = p.adam_v;
            }
        }
        append_parameters(a, lora, "", true);
    }
    save_archive(manifest_path, a);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& manifest_path) {
    const Archive a = load_archive(manifest_path);
    const auto& m = a.meta;
    if (m.value("kind", "") != "emg_checkpoint") {
        throw SchemaError(manifest_path.string() + " is not a training checkpoint");
    }
    if (m.value("checkpoint_version", -1) != kCheckpointVersion) {
        throw SchemaError(manifest_path.string() + ": checkpoint version " +
                          std::to_string(m.value("checkpoint_version", -1)) + ", expected " +
                          std::to_string(kCheckpointVersion));
    }
    CheckpointHeader h;
    const Json meta = m;  // ordered copy
    from_json(meta.at("adaptor"), "adaptor", h.adaptor);
    from_json(meta.at("loss"), "loss", h.loss);
    from_json(meta.at("pipeline"), "features", h.pipeline);
    if (meta.contains("lora")) {
        lm::LoraConfig l;
        from_json(meta.at("lora"), "lora", l);
        h.lora = l;
    }
    h.info.run_config = m.value("run_config", nlohmann::json::object());
    h.info.epoch = m.value("epoch", 0);
    h.info.best_val_loss = m.value("best_val_loss", 0.0);
    if (m.contains("best_val_wer") && !m["best_val_wer"].is_null()) {
        h.info.best_val_wer = m["best_val_wer"].get<double>();
    }
    return h;
}

CheckpointHeader load_checkpoint(const std::filesystem::path& manifest_path, EmgToText& model,
                                 InputPipeline& pipeline) {
    CheckpointHeader h = read_checkpoint_header(manifest_path);
    const Archive a = load_archive(manifest_path);
    restore_parameters(a, model.adaptor().params(), "", true);
    restore_parameters(a, model.head_params(), "", true);
    const auto steps = a.meta.value("step_count", std::int64_t{0});
    model.adaptor().params().set_step_count(steps);
    model.head_params().set_step_count(steps);
    if (model.lm().has_lora()) {
        for (auto& p : model.lm().params()) {
            if (p.name.find(".lora_") != std::string::npos) {
                p.value = a.get(p.name);
                p.adam_m = a.get(p.name + "#m");
                p.adam_v = a.get(p.name + "#v");
            }
        }
        model.lm().params().set_step_count(steps);
    }
    signal::ColumnStats stats;
    const auto& s = a.meta.at("pipeline_stats");
    stats.mean = s.at("mean").get<std::vector<double>>();
    stats.stddev = s.at("stddev").get<std::vector<double>>();
    pipeline = InputPipeline(h.pipeline);
    pipeline.set_stats(std::move(stats));
    return h;
}

}  // namespace emgllm::train
