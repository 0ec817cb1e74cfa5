// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "emgllm/cli/run_config.hpp"

#include <cstdio>
#include <fstream>

#include "emgllm/error.hpp"

namespace emgllm::cli {

using train::StrictReader;
using numerics::derive_seed;

namespace {

Json without(Json j, std::initializer_list<const char*> keys) {
    for (const char* k : keys) {
        j.erase(k);
    }
    return j;
}

void reject(const Json& j, const std::string& section, std::initializer_list<const char*> keys,
            const std::string& why) {
    for (const char* k : keys) {
        if (j.contains(k)) {
            throw SchemaError("config key '" + section + "." + k + "' is derived (" + why + ")");
        }
    }
}

Json pid_json(const train::PidPilotConfig& c) {
    Json j = train::to_json(c.head);
    j["n_speakers"] = c.n_speakers;
    j["n_utterances"] = c.n_utterances;
    j["test_fraction"] = c.test_fraction;
    j["adaptor_epochs"] = c.adaptor_epochs;
    j["joint_epochs"] = c.joint_epochs;
    j["joint_lr"] = c.joint_lr;
    return j;
}

void pid_from_json(const Json& j, train::PidPilotConfig& c) {
    StrictReader r(j, "pid");
    r.get("hidden", c.head.hidden);
    r.get("epochs", c.head.epochs);
    r.get("batch_size", c.head.batch_size);
    r.get("lr", c.head.lr);
    r.get("weight_decay", c.head.weight_decay);
    r.get("n_speakers", c.n_speakers);
    r.get("n_utterances", c.n_utterances);
    r.get("test_fraction", c.test_fraction);
    r.get("adaptor_epochs", c.adaptor_epochs);
    r.get("joint_epochs", c.joint_epochs);
    r.get("joint_lr", c.joint_lr);
    r.finish();
}

}  // namespace

void RunConfig::resolve() {
    if (run_id.empty() || run_id.find('/') != std::string::npos || run_id == "." || run_id == "..") {
        throw ParameterError("run_id must be a non-empty plain name, got '" + run_id + "'");
    }
    corpus.seed = derive_seed(seed, "corpus");
    lm.pretrain.seed = derive_seed(seed, "pretrain");
    train.seed = derive_seed(seed, "train");
    pid.head.seed = derive_seed(seed, "pid");
    train.loss = loss;
    adaptor.input_mode = features.mode;
    adaptor.input_dim = features.mode == adaptor::InputMode::Raw
                            ? corpus.channels
                            : corpus.channels * signal::kFeaturesPerChannel;
    adaptor.output_dim = lm.model.embed_dim;
    lm.model.vocab_size = corpus.vocab_size + lm::kSpecialCount;
    lm.model.prompt_tokens = lm::PromptTemplate{}.reserved_tokens();
    adaptor.validate();
    lm.model.validate();
    loss.validate();
    train.validate();
    if (lm.text_sequences < 2) {
        throw ParameterError("lm.text_sequences must be >= 2");
    }
    if (experiment.folds < 1) {
        throw ParameterError("experiment.folds must be >= 1");
    }
    if (pid.n_speakers < 2) {
        throw ParameterError("pid.n_speakers must be >= 2");
    }
}

Json to_json(const RunConfig& c) {
    Json j;
    j["run_id"] = c.run_id;
    j["output_dir"] = c.output_dir.string();
    j["seed"] = c.seed;
    j["corpus"] = without(train::to_json(c.corpus), {"seed"});
    j["features"] = train::to_json(c.features);
    j["adaptor"] = without(train::to_json(c.adaptor), {"input_mode", "input_dim", "output_dim"});
    Json lm;
    lm["model"] = without(train::to_json(c.lm.model), {"vocab_size", "prompt_tokens"});
    lm["pretrain"] = without(train::to_json(c.lm.pretrain), {"seed"});
    lm["text_sequences"] = c.lm.text_sequences;
    lm["lora"] = c.lm.lora ? train::to_json(*c.lm.lora) : Json(nullptr);
    j["lm"] = lm;
    j["loss"] = train::to_json(c.loss);
    j["train"] = train::to_json(c.train);
    j["decode"] = train::to_json(c.decode);
    j["pid"] = pid_json(c.pid);
    j["experiment"] = {{"folds", c.experiment.folds},
                       {"ratios", c.experiment.ratios},
                       {"sweep_minutes", c.experiment.sweep_minutes},
                       {"sweep_max_epochs", c.experiment.sweep_max_epochs},
                       {"ablation_max_epochs", c.experiment.ablation_max_epochs}};
    return j;
}

RunConfig run_config_from_json(const Json& j) {
    RunConfig c;
    StrictReader r(j, "");
    r.get("run_id", c.run_id);
    std::string out = c.output_dir.string();
    r.get("output_dir", out);
    c.output_dir = out;
    r.get("seed", c.seed);
    if (const Json* s = r.child("corpus")) {
        reject(*s, "corpus", {"seed"}, "from the top-level seed");
        train::from_json(*s, "corpus", c.corpus);
    }
    if (const Json* s = r.child("features")) {
        train::from_json(*s, "features", c.features);
    }
    // Mode-specific adaptor defaults sit under any explicit adaptor keys.
    c.adaptor = adaptor::AdaptorConfig::for_mode(c.features.mode, c.corpus.channels);
    if (const Json* s = r.child("adaptor")) {
        reject(*s, "adaptor", {"input_mode", "input_dim", "output_dim"},
               "from features.mode, corpus.channels and lm.model.embed_dim");
        train::from_json(*s, "adaptor", c.adaptor);
    }
    if (const Json* s = r.child("lm")) {
        StrictReader lr(*s, "lm");
        if (const Json* m = lr.child("model")) {
            reject(*m, "lm.model", {"vocab_size", "prompt_tokens"}, "from corpus.vocab_size and the prompt");
            train::from_json(*m, "lm.model", c.lm.model);
        }
        if (const Json* p = lr.child("pretrain")) {
            reject(*p, "lm.pretrain", {"seed"}, "from the top-level seed");
            train::from_json(*p, "lm.pretrain", c.lm.pretrain);
        }
        lr.get("text_sequences", c.lm.text_sequences);
        if (const Json* l = lr.child("lora"); l && !l->is_null()) {
            lm::LoraConfig lora;
            train::from_json(*l, "lm.lora", lora);
            c.lm.lora = lora;
        }
        lr.finish();
    }
    if (const Json* s = r.child("loss")) {
        train::from_json(*s, "loss", c.loss);
    }
    if (const Json* s = r.child("train")) {
        train::from_json(*s, "train", c.train);
    }
    if (const Json* s = r.child("decode")) {
        train::from_json(*s, "decode", c.decode);
    }
    if (const Json* s = r.child("pid")) {
        pid_from_json(*s, c.pid);
    }
    if (const Json* s = r.child("experiment")) {
        StrictReader er(*s, "experiment");
        er.get("folds", c.experiment.folds);
        er.get("ratios", c.experiment.ratios);
        er.get("sweep_minutes", c.experiment.sweep_minutes);
        er.get("sweep_max_epochs", c.experiment.sweep_max_epochs);
        er.get("ablation_max_epochs", c.experiment.ablation_max_epochs);
        er.finish();
    }
    r.finish();
    c.resolve();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) {
        throw IoError("cannot read config " + path.string());
    }
    Json j;
    try {
        j = Json::parse(is);
    } catch (const Json::parse_error& e) {
        throw SchemaError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

std::string config_hash(const RunConfig& c) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : to_json(c).dump()) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace emgllm::cli
