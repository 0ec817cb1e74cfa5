// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "emgllm/train/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "emgllm/error.hpp"
#include "emgllm/numerics/schedule.hpp"

namespace emgllm::train {

using namespace numerics;

ExperimentResult run_experiment(const corpus::CorpusManifest& corpus,
                                const std::vector<corpus::FoldAssignment>& folds,
                                const lm::LoadedLm& lm, const ExperimentSpec& spec,
                                const FoldHooks& hooks) {
    if (folds.empty()) {
        throw ContractError("run_experiment: no folds");
    }
    if (spec.adaptor.output_dim != lm.lm.config().embed_dim) {
        throw ContractError("adaptor output_dim " + std::to_string(spec.adaptor.output_dim) +
                            " does not match the LM embedding width " +
                            std::to_string(lm.lm.config().embed_dim));
    }
    ExperimentResult out;
    std::vector<decode::SplitReport> per_fold, untrained;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        const int fold = static_cast<int>(f);
        InputPipeline pipeline(spec.pipeline);
        pipeline.fit(corpus, folds[f].train);
        const auto train = make_examples(corpus, folds[f].train, pipeline, lm.vocab);
        const auto val = make_examples(corpus, folds[f].val, pipeline, lm.vocab);
        const auto test = make_examples(corpus, folds[f].test, pipeline, lm.vocab);

        lm::TinyLm<float> model_lm = lm.lm;
        model_lm.freeze();
        const std::uint64_t fold_seed = derive_seed(spec.train.seed, static_cast<std::uint64_t>(f));
        if (spec.lora) {
            model_lm.apply_lora(*spec.lora, derive_seed(fold_seed, "lora"));
        }
        EmgToText model(spec.adaptor, spec.train.loss, model_lm, lm.prompt, derive_seed(fold_seed, "model"));
        if (f == 0) {
            out.trainable_params = model.trainable_count();
        }
        if (spec.evaluate_untrained && !test.empty()) {
            untrained.push_back(evaluate_examples(model, test, lm.vocab, spec.decode));
        }
        TrainConfig tc = spec.train;
        tc.seed = fold_seed;
        EpochCallback cb;
        if (hooks.on_epoch) {
            cb = [&](const EpochRecord& r) { hooks.on_epoch(fold, r); };
        }
        auto result = train_run(model, train, val, tc, spec.decode, lm.vocab, cb);
        if (!result.lm_unchanged) {
            throw NumericError("frozen LM tensors changed during training (fold " + std::to_string(f) + ")");
        }
        if (!test.empty()) {
            per_fold.push_back(evaluate_examples(model, test, lm.vocab, spec.decode));
        }
        if (hooks.on_fold) {
            hooks.on_fold(fold, model, pipeline, result);
        }
        out.initial_val_loss += result.initial_val_loss / static_cast<double>(folds.size());
        out.best_val_loss += result.best_val_loss / static_cast<double>(folds.size());
        out.runs.push_back(std::move(result));
    }
    auto merge = [](std::vector<decode::SplitReport>& reports) {
        decode::SplitReport r;
        std::vector<double> wers;
        for (std::size_t f = 0; f < reports.size(); ++f) {
            auto fm = reports[f].folds.at(0);
            fm.fold = static_cast<int>(f);
            r.folds.push_back(fm);
            wers.push_back(fm.wer);
            for (auto rec : reports[f].records) {
                rec.fold = static_cast<int>(f);
                r.records.push_back(std::move(rec));
            }
        }
        if (!wers.empty()) {
            r.wer_mean = std::accumulate(wers.begin(), wers.end(), 0.0) / static_cast<double>(wers.size());
            r.wer_std = decode::population_std(wers);
        }
        return r;
    };
    out.test = merge(per_fold);
    if (spec.evaluate_untrained) {
        out.untrained_test = merge(untrained);
    }
    return out;
}

std::vector<AblationVariant> default_ablation_suite(const adaptor::AdaptorConfig& base,
                                                    const objective::LossSpec& ce,
                                                    const objective::LossSpec& ctc) {
    using adaptor::Backbone;
    std::vector<AblationVariant> v;
    // No residual blocks: the stem takes the whole 4x that the blocks would.
    auto fc = base;
    fc.res_blocks = 0;
    fc.stem_stride = base.stem_stride * 4;
    fc.stem_kernel = base.stem_kernel * 4;
    fc.backbone = Backbone::NoneFc;
    v.push_back({"fc", fc, ce});
    auto with = [&](Backbone b) {
        auto a = base;
        a.backbone = b;
        return a;
    };
    v.push_back({"resblock", with(Backbone::NoneFc), ce});
    v.push_back({"resblock+transformer_sin", with(Backbone::TransformerSin), ce});
    v.push_back({"resblock+lstm", with(Backbone::Lstm), ce});
    v.push_back({"resblock+bilstm", with(Backbone::Bilstm), ce});
    v.push_back({"resblock+transformer_rope", with(Backbone::TransformerRope), ce});
    v.push_back({"resblock+bilstm", with(Backbone::Bilstm), ctc});
    return v;
}

std::vector<AblationRow> run_ablation(const corpus::CorpusManifest& corpus,
                                      const std::vector<corpus::FoldAssignment>& folds,
                                      const lm::LoadedLm& lm, const ExperimentSpec& spec,
                                      const std::vector<AblationVariant>& variants,
                                      const std::function<void(const AblationRow&)>& on_row) {
    std::vector<AblationRow> rows;
    for (const auto& variant : variants) {
        AblationRow row;
        row.variant = variant.name;
        row.loss = objective::to_string(variant.loss.kind);
        try {
            ExperimentSpec s = spec;
            s.adaptor = variant.adaptor;
            s.train.loss = variant.loss;
            const auto r = run_experiment(corpus, folds, lm, s);
            row.ok = true;
            row.trainable_params = r.trainable_params;
            row.wer_mean = r.test.wer_mean;
            row.wer_std = r.test.wer_std;
            row.initial_val_loss = r.initial_val_loss;
            row.final_val_loss = r.best_val_loss;
        } catch (const std::exception& e) {
            row.ok = false;
            row.error = e.what();
        }
        rows.push_back(row);
        if (on_row) {
            on_row(rows.back());
        }
    }
    return rows;
}

namespace {

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        out += c == '"' ? std::string("\"\"") : std::string(1, c == '\n' ? ' ' : c);
    }
    return out + "\"";
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path);
    if (!os) {
        throw IoError("cannot write " + path.string());
    }
    return os;
}

}  // namespace

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path) {
    auto os = open_out(path);
    os << "variant,loss,status,trainable_params,wer_mean,wer_std,initial_val_loss,final_val_loss,error\n";
    for (const auto& r : rows) {
        os << csv_field(r.variant) << ',' << r.loss << ',' << (r.ok ? "ok" : "failed") << ','
           << r.trainable_params << ',' << fixed(r.wer_mean, 4) << ',' << fixed(r.wer_std, 4) << ','
           << fixed(r.initial_val_loss, 4) << ',' << fixed(r.final_val_loss, 4) << ','
           << csv_field(r.error) << '\n';
    }
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
    std::vector<std::vector<std::string>> cells = {
        {"variant", "loss", "params", "WER", "val loss (init -> best)"}};
    for (const auto& r : rows) {
        if (r.ok) {
            cells.push_back({r.variant, r.loss, std::to_string(r.trainable_params),
                             fixed(r.wer_mean, 2) + " +- " + fixed(r.wer_std, 2),
                             fixed(r.initial_val_loss, 3) + " -> " + fixed(r.final_val_loss, 3)});
        } else {
            cells.push_back({r.variant, r.loss, "-", "failed", r.error});
        }
    }
    std::vector<std::size_t> width(cells[0].size(), 0);
    for (const auto& row : cells) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            width[c] = std::max(width[c], row[c].size());
        }
    }
    std::ostringstream os;
    for (std::size_t r = 0; r < cells.size(); ++r) {
        for (std::size_t c = 0; c < cells[r].size(); ++c) {
            os << (c ? "  " : "") << cells[r][c];
            if (c + 1 < cells[r].size()) {
                os << std::string(width[c] - cells[r][c].size(), ' ');
            }
        }
        os << '\n';
        if (r == 0) {
            std::size_t total = 0;
            for (auto w : width) {
                total += w;
            }
            os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
        }
    }
    return os.str();
}

std::vector<SweepRow> data_efficiency_sweep(const corpus::CorpusManifest& corpus,
                                            const std::vector<corpus::FoldAssignment>& folds,
                                            const lm::LoadedLm& lm, const ExperimentSpec& spec,
                                            const std::vector<double>& minutes,
                                            const std::function<void(const std::string&)>& warn) {
    if (minutes.empty()) {
        throw ParameterError("data_efficiency_sweep: no budgets");
    }
    if (!std::is_sorted(minutes.begin(), minutes.end())) {
        throw ParameterError("data_efficiency_sweep: budgets must be ascending");
    }
    auto duration = [&](const std::vector<std::string>& ids) {
        double s = 0;
        for (const auto& id : ids) {
            s += corpus.find(id).recording.seconds();
        }
        return s / 60.0;
    };
    std::vector<SweepRow> rows;
    for (std::size_t b = 0; b < minutes.size(); ++b) {
        SweepRow row;
        row.requested_minutes = minutes[b];
        std::vector<corpus::FoldAssignment> sub = folds;
        double total_minutes = 0;
        int total_n = 0;
        for (std::size_t f = 0; f < sub.size(); ++f) {
            const double available = duration(folds[f].train);
            auto ids = corpus::subsample_minutes(folds[f].train, corpus, minutes[b],
                                                 derive_seed(spec.train.seed, static_cast<std::uint64_t>(f)));
            if (ids.empty()) {
                // Shorter than any utterance: keep the shortest one.
                auto shortest = std::min_element(folds[f].train.begin(), folds[f].train.end(),
                                                 [&](const std::string& a, const std::string& c) {
                                                     return corpus.find(a).recording.length() <
                                                            corpus.find(c).recording.length();
                                                 });
                ids = {*shortest};
                row.clamped = true;
            }
            if (minutes[b] > available + 1e-9) {
                row.clamped = true;
            }
            sub[f].train = ids;
            total_minutes += duration(ids);
            total_n += static_cast<int>(ids.size());
        }
        row.minutes = total_minutes / static_cast<double>(sub.size());
        row.n_train = total_n / static_cast<int>(sub.size());
        if (row.clamped && warn) {
            warn("budget " + fixed(minutes[b], 3) + " min clamped to " + fixed(row.minutes, 3) +
                 " min (" + std::to_string(row.n_train) + " utterances)");
        }
        const auto r = run_experiment(corpus, sub, lm, spec);
        row.wer_mean = r.test.wer_mean;
        row.wer_std = r.test.wer_std;
        rows.push_back(row);
    }
    return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
    auto os = open_out(path);
    os << "requested_minutes,minutes,n_train,clamped,wer_mean,wer_std\n";
    for (const auto& r : rows) {
        os << fixed(r.requested_minutes, 4) << ',' << fixed(r.minutes, 4) << ',' << r.n_train << ','
           << (r.clamped ? 1 : 0) << ',' << fixed(r.wer_mean, 4) << ',' << fixed(r.wer_std, 4) << '\n';
    }
}

PidPilotResult run_pid_pilot(const corpus::CorpusManifest& corpus, EmgToText& frozen_model,
                             const InputPipeline& pipeline, const PidPilotConfig& config,
                             std::uint64_t seed) {
    std::map<std::string, int> speaker_index;
    for (const auto& s : corpus.speakers) {
        speaker_index.emplace(s, static_cast<int>(speaker_index.size()));
    }
    const int classes = static_cast<int>(speaker_index.size());
    if (classes < 2) {
        throw ContractError("person identification needs a corpus with at least 2 speakers");
    }
    if (!(config.test_fraction > 0 && config.test_fraction < 1)) {
        throw ParameterError("pid test_fraction must be in (0, 1)");
    }
    // Split per speaker so both partitions keep the speaker proportions.
    std::vector<std::vector<std::size_t>> by_speaker(static_cast<std::size_t>(classes));
    for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
        by_speaker[static_cast<std::size_t>(speaker_index.at(corpus.utterances[i].recording.speaker_id))].push_back(i);
    }
    Rng rng(derive_seed(seed, "pid_split"));
    struct Item {
        Tensor<float> input;
        int label;
    };
    std::vector<Item> train_items, test_items;
    for (auto& group : by_speaker) {
        std::shuffle(group.begin(), group.end(), rng);
        const auto n_test = static_cast<std::size_t>(std::lround(config.test_fraction * static_cast<double>(group.size())));
        if (n_test == 0 || n_test >= group.size()) {
            throw ContractError("pid split leaves a speaker without train or test utterances");
        }
        for (std::size_t i = 0; i < group.size(); ++i) {
            const auto& u = corpus.utterances[group[i]];
            Item it{pipeline.prepare(u.recording), speaker_index.at(u.recording.speaker_id)};
            (i < n_test ? test_items : train_items).push_back(std::move(it));
        }
    }

    PidPilotResult result;
    result.speakers = classes;
    result.n_train = static_cast<int>(train_items.size());
    result.n_test = static_cast<int>(test_items.size());

    // Head only, on pooled logits of the given frozen adaptor and LM.
    auto probe_samples = [&](const std::vector<Item>& items) {
        std::vector<decode::PidSample> out;
        for (const auto& it : items) {
            out.push_back({decode::pid_pool(frozen_model.unprompted_logits(it.input)), it.label});
        }
        return out;
    };
    auto head_cfg = config.head;
    head_cfg.seed = derive_seed(seed, "probe_head");
    result.frozen_adaptor_accuracy =
        decode::train_pid_head(probe_samples(train_items), probe_samples(test_items), classes, head_cfg).test_accuracy;

    // A fresh adaptor and head trained jointly on person labels, optionally
    // through the frozen LM (no prompt, time-mean of the logits).
    auto train_net = [&](bool through_lm, const std::vector<int>& labels, const std::string& tag) {
        adaptor::Adaptor<float> net(frozen_model.adaptor().config(), derive_seed(seed, tag + "_adaptor"));
        auto& ps = net.params();
        Rng head_rng(derive_seed(seed, tag + "_head"));
        lm::TinyLm<float>& lm = frozen_model.lm();
        const int dim = through_lm ? lm.config().vocab_size : net.config().output_dim;
        const auto l1 = add_linear(ps, "pid.fc1", dim, config.head.hidden, true, head_rng);
        const auto l2 = add_linear(ps, "pid.fc2", config.head.hidden, classes, true, head_rng);
        auto logits = [&](Tape<float>& tape, const Tensor<float>& x) {
            auto e = net.forward(tape, x);
            auto pooled = mean_rows(through_lm ? lm.forward(tape, e) : e);
            return apply(tape, ps, l2, gelu(apply(tape, ps, l1, pooled)));
        };
        AdamWConfig opt;
        opt.weight_decay = config.head.weight_decay;
        std::vector<std::size_t> idx(train_items.size());
        Rng order_rng(derive_seed(seed, tag + "_order"));
        const int batch = std::max(1, config.head.batch_size);
        const std::int64_t steps_per_epoch = (static_cast<std::int64_t>(idx.size()) + batch - 1) / batch;
        const std::int64_t total = steps_per_epoch * config.joint_epochs;
        std::int64_t step = 0;
        for (int epoch = 0; epoch < config.joint_epochs; ++epoch) {
            std::iota(idx.begin(), idx.end(), std::size_t{0});
            std::shuffle(idx.begin(), idx.end(), order_rng);
            for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(batch)) {
                const std::size_t end = std::min(idx.size(), start + static_cast<std::size_t>(batch));
                ps.zero_grad();
                for (std::size_t i = start; i < end; ++i) {
                    Tape<float> tape;
                    const std::vector<int> y = {labels[idx[i]]};
                    auto loss = objective::ce_temperature_loss(logits(tape, train_items[idx[i]].input), y, 1.0f);
                    tape.backward(scale(loss, 1.0f / static_cast<float>(end - start)));
                }
                clip_grad_norm(ps, 1.0);
                opt.lr = scheduled_lr(step++, total, config.joint_lr, 0.1, 0.1);
                adamw_step(ps, opt);
            }
        }
        int hit = 0;
        for (const auto& it : test_items) {
            Tape<float> tape(false);
            const auto z = logits(tape, it.input).value();
            const auto row = z.row(0);
            hit += static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) == it.label;
        }
        return static_cast<double>(hit) / static_cast<double>(test_items.size());
    };

    std::vector<int> labels;
    for (const auto& it : train_items) {
        labels.push_back(it.label);
    }
    result.probe_accuracy = train_net(true, labels, "pid_llm");
    result.end_to_end_accuracy = train_net(false, labels, "pid_e2e");
    Rng shuffle_rng(derive_seed(seed, "pid_shuffle"));
    std::shuffle(labels.begin(), labels.end(), shuffle_rng);
    result.shuffled_accuracy = train_net(true, labels, "pid_shuffled");
    return result;
}

}  // namespace emgllm::train
