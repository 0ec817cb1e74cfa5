// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "emgllm/cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <thread>

#include "emgllm/error.hpp"

namespace emgllm::cli {

namespace fs = std::filesystem;
using numerics::derive_seed;
using numerics::Tensor;

namespace {

std::ostream& log_of(const CommandOptions& o) { return o.log ? *o.log : std::cerr; }

// Empties (or creates) a command's output directory.
fs::path prepare_dir(const RunConfig& c, const std::string& name, const CommandOptions& o) {
    const fs::path dir = c.root() / name;
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!o.force) {
            throw Error("OutputExists", dir.string() + " already exists; pass --force to overwrite");
        }
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os || !(os << text)) {
        throw IoError("cannot write " + path.string());
    }
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

// Lists every file under dir (sorted, relative) and records how they were made.
void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& c,
                    const Json& extra = Json::object()) {
    std::vector<std::pair<std::string, std::uintmax_t>> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().filename() != "run_manifest.json") {
            files.emplace_back(fs::relative(e.path(), dir).generic_string(), e.file_size());
        }
    }
    std::sort(files.begin(), files.end());
    Json list = Json::array();
    for (const auto& [p, n] : files) {
        list.push_back({{"path", p}, {"bytes", n}});
    }
    Json m;
    m["command"] = command;
    m["run_id"] = c.run_id;
    m["config_hash"] = config_hash(c);
    m["seeds"] = {{"run", c.seed},
                  {"corpus", c.corpus.seed},
                  {"pretrain", c.lm.pretrain.seed},
                  {"train", c.train.seed},
                  {"pid", c.pid.head.seed}};
    m["config"] = to_json(c);
    m["result"] = extra;
    m["files"] = list;
    m["created_utc"] = utc_now();
    write_json(dir / "run_manifest.json", m);
}

corpus::CorpusManifest require_corpus(const RunConfig& c) {
    const fs::path dir = c.root() / "corpus";
    if (!fs::exists(dir / "manifest.jsonl")) {
        throw MissingArtifactError("corpus not found at " + dir.string() + "; run `emgllm gen` first");
    }
    return corpus::load_corpus(dir);
}

lm::LoadedLm require_lm(const RunConfig& c) {
    const fs::path path = c.root() / "lm" / "lm.json";
    if (!fs::exists(path)) {
        throw MissingArtifactError("pretrained LM not found at " + path.string() +
                                   "; run `emgllm pretrain-lm` first");
    }
    return lm::load_lm(path);
}

std::vector<corpus::FoldAssignment> folds_of(const RunConfig& c, const corpus::CorpusManifest& m) {
    return corpus::split_folds(m, c.experiment.ratios, c.experiment.folds, derive_seed(c.seed, "split"));
}

train::ExperimentSpec spec_of(const RunConfig& c) {
    train::ExperimentSpec s;
    s.pipeline = c.features;
    s.adaptor = c.adaptor;
    s.train = c.train;
    s.decode = c.decode;
    s.lora = c.lm.lora;
    return s;
}

std::string fold_dir(int f) { return "fold" + std::to_string(f); }

void write_history(const fs::path& path, const std::string& run_id,
                   const std::vector<train::EpochRecord>& history) {
    std::ofstream os(path);
    os << "run_id,epoch,split,loss,wer\n";
    char buf[64];
    for (const auto& r : history) {
        std::snprintf(buf, sizeof(buf), "%.6f", r.train_loss);
        os << run_id << ',' << r.epoch << ",train," << buf << ",\n";
        std::snprintf(buf, sizeof(buf), "%.6f", r.val_loss);
        os << run_id << ',' << r.epoch << ",val," << buf << ',';
        if (r.val_wer) {
            std::snprintf(buf, sizeof(buf), "%.6f", *r.val_wer);
            os << buf;
        }
        os << '\n';
    }
    if (!os) {
        throw IoError("cannot write " + path.string());
    }
}

Json report_json(const decode::SplitReport& r) {
    Json folds = Json::array();
    for (const auto& f : r.folds) {
        folds.push_back({{"fold", f.fold},
                         {"wer", f.wer},
                         {"mean_utterance_wer", f.mean_utterance_wer},
                         {"n_words", f.n_words},
                         {"n_errors", f.n_errors}});
    }
    return {{"wer_mean", r.wer_mean}, {"wer_std", r.wer_std}, {"folds", folds}};
}

struct RestoredModel {
    lm::TinyLm<float> lm;
    train::CheckpointHeader header;
    train::InputPipeline pipeline;
    std::unique_ptr<train::EmgToText> model;
};

std::unique_ptr<RestoredModel> restore_model(const fs::path& path, const lm::LoadedLm& base) {
    auto r = std::make_unique<RestoredModel>(RestoredModel{base.lm, {}, {}, nullptr});
    r->header = train::read_checkpoint_header(path);
    r->lm.freeze();
    if (r->header.lora) {
        r->lm.apply_lora(*r->header.lora, 0);
    }
    r->model = std::make_unique<train::EmgToText>(r->header.adaptor, r->header.loss, r->lm, base.prompt, 0);
    r->pipeline = train::InputPipeline(r->header.pipeline);
    train::load_checkpoint(path, *r->model, r->pipeline);
    return r;
}

}  // namespace

std::vector<std::vector<int>> sample_text(const corpus::SyntheticConfig& cfg, int count,
                                          std::uint64_t seed) {
    corpus::TranscriptModel model(cfg.vocab_size, cfg.words_per_utterance_mean, cfg.seed);
    std::vector<std::vector<int>> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        auto words = model.sample(derive_seed(seed, static_cast<std::uint64_t>(i)));
        for (auto& w : words) {
            w += lm::kSpecialCount;
        }
        out.push_back(std::move(words));
    }
    return out;
}

void cmd_gen(const RunConfig& c, const CommandOptions& o) {
    const auto dir = prepare_dir(c, "corpus", o);
    const auto m = corpus::generate_synthetic_corpus(c.corpus);
    corpus::save_corpus(m, dir);
    log_of(o) << "gen: " << m.utterances.size() << " utterances, " << m.total_minutes() << " min\n";
    write_manifest(dir, "gen", c, {{"utterances", m.utterances.size()}, {"minutes", m.total_minutes()}});
}

void cmd_featurize(const RunConfig& c, const CommandOptions& o) {
    const auto m = require_corpus(c);
    const auto dir = prepare_dir(c, "features", o);
    train::PipelineConfig pc = c.features;
    pc.mode = adaptor::InputMode::Features;
    const train::InputPipeline pipeline(pc);
    const int jobs = std::max(1, o.jobs);
    std::vector<int> rows(m.utterances.size(), 0);
    std::vector<std::string> errors(static_cast<std::size_t>(jobs));
    auto work = [&](int worker) {
        try {
            for (std::size_t i = static_cast<std::size_t>(worker); i < m.utterances.size();
                 i += static_cast<std::size_t>(jobs)) {
                const auto& u = m.utterances[i];
                const auto x = pipeline.prepare(u.recording);
                rows[i] = x.rows();
                corpus::write_f32(dir / (u.id() + ".f32"), x);
            }
        } catch (const std::exception& e) {
            errors[static_cast<std::size_t>(worker)] = e.what();
        }
    };
    std::vector<std::thread> pool;
    for (int w = 1; w < jobs; ++w) {
        pool.emplace_back(work, w);
    }
    work(0);
    for (auto& t : pool) {
        t.join();
    }
    for (const auto& e : errors) {
        if (!e.empty()) {
            throw IoError("featurize: " + e);
        }
    }
    Json index = Json::array();
    for (std::size_t i = 0; i < m.utterances.size(); ++i) {
        index.push_back({{"utterance_id", m.utterances[i].id()}, {"rows", rows[i]}});
    }
    // Frames are unnormalized; column statistics belong to a training split.
    write_json(dir / "index.json", {{"cols", pipeline.input_dim(c.corpus.channels)},
                                    {"frame_rate", pc.target_rate / pc.frames.hop},
                                    {"spec", train::to_json(pc)},
                                    {"utterances", index}});
    log_of(o) << "featurize: " << m.utterances.size() << " utterances, "
              << pipeline.input_dim(c.corpus.channels) << " features per frame\n";
    write_manifest(dir, "featurize", c);
}

void cmd_pretrain_lm(const RunConfig& c, const CommandOptions& o) {
    const auto m = require_corpus(c);
    const auto dir = prepare_dir(c, "lm", o);
    lm::Vocabulary vocab(m.vocabulary);
    if (vocab.size() != c.lm.model.vocab_size) {
        throw ContractError("corpus vocabulary has " + std::to_string(vocab.word_count()) +
                            " words but the config expects " + std::to_string(c.corpus.vocab_size));
    }
    const auto text = sample_text(c.corpus, c.lm.text_sequences, derive_seed(c.seed, "lm_text"));
    const auto heldout = sample_text(c.corpus, std::max(50, c.lm.text_sequences / 20),
                                     derive_seed(c.seed, "lm_heldout"));
    lm::TinyLm<float> model(c.lm.model, derive_seed(c.seed, "lm_init"));
    const auto report = lm::pretrain_lm(model, text, heldout, lm::PromptTemplate{}, c.lm.pretrain);
    lm::save_lm(model, lm::PromptTemplate{}, vocab, dir / "lm.json");
    const Json result = {{"initial_heldout_loss", report.initial_heldout_loss},
                         {"final_heldout_loss", report.final_heldout_loss},
                         {"ln_vocab", std::log(static_cast<double>(vocab.size()))},
                         {"parameters", model.param_count(false)},
                         {"train_loss", report.train_loss}};
    write_json(dir / "pretrain.json", result);
    log_of(o) << "pretrain-lm: held-out loss " << report.initial_heldout_loss << " -> "
              << report.final_heldout_loss << "\n";
    write_manifest(dir, "pretrain-lm",
                   c, {{"final_heldout_loss", report.final_heldout_loss}});
}

void cmd_train(const RunConfig& c, const CommandOptions& o) {
    const auto m = require_corpus(c);
    const auto base = require_lm(c);
    const auto dir = prepare_dir(c, "train", o);
    const auto folds = folds_of(c, m);
    auto spec = spec_of(c);
    spec.evaluate_untrained = true;
    auto& log = log_of(o);
    train::FoldHooks hooks;
    hooks.on_epoch = [&](int fold, const train::EpochRecord& r) {
        log << "train: fold " << fold << " epoch " << r.epoch << " loss " << r.train_loss << " val "
            << r.val_loss;
        if (r.val_wer) {
            log << " val_wer " << *r.val_wer;
        }
        log << "\n";
    };
    hooks.on_fold = [&](int fold, train::EmgToText& model, const train::InputPipeline& pipeline,
                        const train::TrainResult& result) {
        const fs::path fd = dir / fold_dir(fold);
        fs::create_directories(fd);
        write_history(fd / "history.csv", c.run_id, result.history);
        const auto val = train::make_examples(m, folds[static_cast<std::size_t>(fold)].val, pipeline, base.vocab);
        train::CheckpointInfo info;
        info.run_config = {{"config", to_json(c)}, {"fold", fold}};
        info.epoch = result.best_epoch;
        info.best_val_loss = result.best_val_loss;
        if (!val.empty()) {
            info.best_val_wer = train::evaluate_examples(model, val, base.vocab, c.decode).wer_mean;
        }
        train::save_checkpoint(fd / "checkpoint.json", model, pipeline, info);
    };
    const auto r = train::run_experiment(m, folds, base, spec, hooks);
    decode::write_metrics_csv(r.test, "test", dir / "metrics_test.csv");
    decode::write_predictions_jsonl(r.test, dir / "predictions_test.jsonl");
    Json summary = {{"test", report_json(r.test)},
                    {"trainable_params", r.trainable_params},
                    {"initial_val_loss", r.initial_val_loss},
                    {"best_val_loss", r.best_val_loss}};
    if (r.untrained_test) {
        summary["untrained_test"] = report_json(*r.untrained_test);
    }
    write_json(dir / "summary.json", summary);
    log << "train: test WER " << r.test.wer_mean << " +- " << r.test.wer_std << "\n";
    write_manifest(dir, "train", c, {{"wer_mean", r.test.wer_mean}, {"wer_std", r.test.wer_std}});
}

void cmd_eval(const RunConfig& c, const CommandOptions& o) {
    const auto m = require_corpus(c);
    const lm::Vocabulary vocab(m.vocabulary);
    const auto folds = folds_of(c, m);
    auto items_of = [&](const std::vector<std::string>& ids) {
        std::vector<decode::EvalItem> items;
        for (const auto& id : ids) {
            items.push_back({id, m.find(id).transcript});
        }
        return items;
    };
    std::vector<std::vector<decode::EvalItem>> eval_folds;
    std::vector<decode::Transcriber> transcribers;
    std::vector<std::unique_ptr<RestoredModel>> models;
    std::vector<std::map<std::string, Tensor<float>>> inputs;
    Json val_wers = Json::array();
    if (o.oracle) {
        for (const auto& f : folds) {
            eval_folds.push_back(items_of(f.test));
            transcribers.push_back([&](const std::string& id) {
                return decode::Transcription{m.find(id).transcript, 0.0};
            });
        }
    } else {
        const auto base = require_lm(c);
        std::vector<std::pair<int, fs::path>> ckpts;
        if (o.checkpoint) {
            const auto h = train::read_checkpoint_header(*o.checkpoint);
            ckpts.emplace_back(h.info.run_config.value("fold", 0), *o.checkpoint);
        } else {
            for (std::size_t f = 0; f < folds.size(); ++f) {
                const fs::path p = c.root() / "train" / fold_dir(static_cast<int>(f)) / "checkpoint.json";
                if (!fs::exists(p)) {
                    throw MissingArtifactError("checkpoint not found at " + p.string() +
                                               "; run `emgllm train` first");
                }
                ckpts.emplace_back(static_cast<int>(f), p);
            }
        }
        for (const auto& [fold, path] : ckpts) {
            if (fold < 0 || fold >= static_cast<int>(folds.size())) {
                throw ContractError("checkpoint fold " + std::to_string(fold) + " is outside the configured split");
            }
            models.push_back(restore_model(path, base));
            auto& rm = *models.back();
            const auto& split = folds[static_cast<std::size_t>(fold)];
            const auto val = train::make_examples(m, split.val, rm.pipeline, vocab);
            if (!val.empty()) {
                const double w = train::evaluate_examples(*rm.model, val, vocab, c.decode).wer_mean;
                Json entry = {{"fold", fold}, {"val_wer", w}};
                if (rm.header.info.best_val_wer) {
                    entry["recorded_val_wer"] = *rm.header.info.best_val_wer;
                }
                val_wers.push_back(entry);
            }
            std::map<std::string, Tensor<float>> in;
            for (const auto& id : split.test) {
                in.emplace(id, rm.pipeline.prepare(m.find(id).recording));
            }
            inputs.push_back(std::move(in));
            eval_folds.push_back(items_of(split.test));
        }
        for (std::size_t i = 0; i < models.size(); ++i) {
            transcribers.push_back([&, i](const std::string& id) {
                return models[i]->model->transcribe(inputs[i].at(id), vocab, c.decode);
            });
        }
    }
    const auto dir = prepare_dir(c, "eval", o);
    const auto report = decode::evaluate_split(eval_folds, transcribers);
    decode::write_metrics_csv(report, "test", dir / "metrics_test.csv");
    decode::write_predictions_jsonl(report, dir / "predictions_test.jsonl");
    Json summary = {{"oracle", o.oracle}, {"test", report_json(report)}, {"val", val_wers}};
    write_json(dir / "summary.json", summary);
    log_of(o) << "eval: test WER " << report.wer_mean << " +- " << report.wer_std << "\n";
    write_manifest(dir, "eval", c, {{"wer_mean", report.wer_mean}, {"wer_std", report.wer_std}});
}

void cmd_ablate(const RunConfig& c, const CommandOptions& o) {
    const auto m = require_corpus(c);
    const auto base = require_lm(c);
    const auto dir = prepare_dir(c, "ablate", o);
    auto spec = spec_of(c);
    spec.train.max_epochs = c.experiment.ablation_max_epochs;
    objective::LossSpec ce = c.loss, ctc = c.loss;
    ce.kind = objective::LossKind::CeTemperature;
    ctc.kind = objective::LossKind::Ctc;
    const auto variants = train::default_ablation_suite(c.adaptor, ce, ctc);
    auto& log = log_of(o);
    const auto rows = train::run_ablation(m, folds_of(c, m), base, spec, variants, [&](const train::AblationRow& r) {
        log << "ablate: " << r.variant << " (" << r.loss << ") "
            << (r.ok ? "WER " + std::to_string(r.wer_mean) : "failed: " + r.error) << "\n";
    });
    train::write_ablation_csv(rows, dir / "ablation.csv");
    const auto table = train::ablation_table(rows);
    write_text(dir / "ablation.txt", table);
    log << table;
    int failed = 0;
    for (const auto& r : rows) {
        failed += r.ok ? 0 : 1;
    }
    write_manifest(dir, "ablate", c, {{"variants", rows.size()}, {"failed", failed}});
}

void cmd_sweep(const RunConfig& c, const CommandOptions& o) {
    const auto m = require_corpus(c);
    const auto base = require_lm(c);
    const auto dir = prepare_dir(c, "sweep", o);
    auto spec = spec_of(c);
    spec.train.max_epochs = c.experiment.sweep_max_epochs;
    auto& log = log_of(o);
    const auto rows = train::data_efficiency_sweep(m, folds_of(c, m), base, spec, c.experiment.sweep_minutes,
                                                   [&](const std::string& w) { log << "sweep: warning: " << w << "\n"; });
    train::write_sweep_csv(rows, dir / "sweep.csv");
    for (const auto& r : rows) {
        log << "sweep: " << r.minutes << " min -> WER " << r.wer_mean << " +- " << r.wer_std << "\n";
    }
    write_manifest(dir, "sweep", c, {{"budgets", rows.size()}});
}

void cmd_pid(const RunConfig& c, const CommandOptions& o) {
    const auto base = require_lm(c);
    const auto dir = prepare_dir(c, "pid", o);
    auto& log = log_of(o);
    corpus::SyntheticConfig cc = c.corpus;
    cc.n_speakers = c.pid.n_speakers;
    cc.n_utterances = c.pid.n_utterances;
    const auto m = corpus::generate_synthetic_corpus(cc);
    const auto ids = m.ids();
    train::InputPipeline pipeline(c.features);
    pipeline.fit(m, ids);
    // The adaptor learns transcription first; the probe then reads it frozen.
    std::vector<std::string> tr(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(ids.size() / 10));
    std::vector<std::string> va(ids.end() - static_cast<std::ptrdiff_t>(ids.size() / 10), ids.end());
    lm::TinyLm<float> model_lm = base.lm;
    model_lm.freeze();
    train::EmgToText model(c.adaptor, objective::LossSpec{}, model_lm, base.prompt, derive_seed(c.seed, "pid_model"));
    train::TrainConfig tc = c.train;
    tc.loss = objective::LossSpec{};
    tc.max_epochs = c.pid.adaptor_epochs;
    tc.val_wer_every = 0;
    if (tc.max_epochs > 0) {
        train::train_run(model, train::make_examples(m, tr, pipeline, base.vocab),
                         train::make_examples(m, va, pipeline, base.vocab), tc, c.decode, base.vocab);
    }
    const auto r = train::run_pid_pilot(m, model, pipeline, c.pid, derive_seed(c.seed, "pid_pilot"));
    const Json result = {{"speakers", r.speakers},
                         {"n_train", r.n_train},
                         {"n_test", r.n_test},
                         {"probe_accuracy", r.probe_accuracy},
                         {"end_to_end_accuracy", r.end_to_end_accuracy},
                         {"shuffled_label_accuracy", r.shuffled_accuracy},
                         {"frozen_adaptor_head_accuracy", r.frozen_adaptor_accuracy},
                         {"chance", 1.0 / r.speakers}};
    write_json(dir / "pid.json", result);
    log << "pid: probe " << r.probe_accuracy << ", end-to-end " << r.end_to_end_accuracy << ", shuffled "
        << r.shuffled_accuracy << ", head only " << r.frozen_adaptor_accuracy << "\n";
    write_manifest(dir, "pid", c, result);
}

const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names = {"gen",  "featurize", "pretrain-lm", "train",
                                                   "eval", "ablate",    "sweep",       "pid"};
    return names;
}

void run_command(const std::string& name, const RunConfig& config, const CommandOptions& options) {
    static const std::map<std::string, void (*)(const RunConfig&, const CommandOptions&)> table = {
        {"gen", cmd_gen},     {"featurize", cmd_featurize}, {"pretrain-lm", cmd_pretrain_lm},
        {"train", cmd_train}, {"eval", cmd_eval},           {"ablate", cmd_ablate},
        {"sweep", cmd_sweep}, {"pid", cmd_pid}};
    const auto it = table.find(name);
    if (it == table.end()) {
        throw ParameterError("unknown command '" + name + "'");
    }
    it->second(config, options);
}

}  // namespace emgllm::cli
