// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "../support/temp_dir.hpp"
#include "doctest.h"
#include "emgllm/cli/commands.hpp"
#include "emgllm/error.hpp"

using namespace emgllm;
using namespace emgllm::cli;
namespace fs = std::filesystem;

namespace {

RunConfig small(const fs::path& out) {
    Json j = Json::parse(R"({
        "run_id": "t",
        "seed": 5,
        "corpus": {"n_utterances": 20},
        "adaptor": {"conv_channels": 8, "backbone_hidden": 8, "inner_dim": 16},
        "lm": {"model": {"embed_dim": 16, "layers": 1, "heads": 2, "ff_dim": 32},
               "pretrain": {"steps": 10, "batch_size": 4},
               "text_sequences": 40},
        "train": {"max_epochs": 2, "batch_size": 4, "val_wer_every": 0},
        "experiment": {"folds": 2}
    })");
    j["output_dir"] = out.string();
    return run_config_from_json(j);
}

CommandOptions quiet(std::ostringstream& log, bool force = false) {
    CommandOptions o;
    o.log = &log;
    o.force = force;
    return o;
}

Json read_json(const fs::path& p) {
    std::ifstream is(p);
    return Json::parse(is);
}

std::string error_kind_of(const std::function<void()>& f, std::string* message = nullptr) {
    try {
        f();
    } catch (const Error& e) {
        if (message) {
            *message = e.what();
        }
        return e.kind();
    }
    return "";
}

}  // namespace

TEST_CASE("config round trips through its printed form") {
    testing::TempDir tmp("cli_cfg");
    const RunConfig c = small(tmp.path());
    const Json printed = to_json(c);
    const RunConfig again = run_config_from_json(printed);
    CHECK(to_json(again) == printed);
    CHECK(config_hash(again) == config_hash(c));
    CHECK(config_hash(c).size() == 16);

    const RunConfig d = run_config_from_json(Json::object());
    CHECK(d.features.mode == adaptor::InputMode::Features);
    CHECK(d.adaptor.input_dim == 8 * signal::kFeaturesPerChannel);
    CHECK(d.adaptor.output_dim == d.lm.model.embed_dim);
    CHECK(d.lm.model.vocab_size == 71);
}

TEST_CASE("derived seeds follow the top-level seed") {
    Json a = {{"seed", 1}}, b = {{"seed", 2}};
    const RunConfig ca = run_config_from_json(a), cb = run_config_from_json(b);
    CHECK(ca.corpus.seed != cb.corpus.seed);
    CHECK(ca.train.seed != cb.train.seed);
    CHECK(ca.corpus.seed != ca.train.seed);
    CHECK(config_hash(ca) != config_hash(cb));
}

TEST_CASE("unknown and derived keys are rejected") {
    std::string msg;
    CHECK(error_kind_of([] { run_config_from_json({{"train", {{"max_epoch", 3}}}}); }, &msg) == "SchemaError");
    CHECK(msg.find("max_epoch") != std::string::npos);
    CHECK(error_kind_of([] { run_config_from_json({{"colour", 1}}); }) == "SchemaError");
    CHECK(error_kind_of([] { run_config_from_json({{"corpus", {{"seed", 1}}}}); }, &msg) == "SchemaError");
    CHECK(msg.find("derived") != std::string::npos);
    CHECK(error_kind_of([] { run_config_from_json({{"adaptor", {{"input_dim", 3}}}}); }) == "SchemaError");
    CHECK(error_kind_of([] { run_config_from_json({{"lm", {{"model", {{"vocab_size", 9}}}}}}); }) ==
          "SchemaError");
    CHECK(error_kind_of([] { run_config_from_json({{"run_id", "a/b"}}); }) == "ParameterError");
    CHECK(error_kind_of([] { run_config_from_json({{"experiment", {{"folds", 0}}}}); }) == "ParameterError");
}

TEST_CASE("missing artifacts name the command that makes them") {
    testing::TempDir tmp("cli_missing");
    const RunConfig c = small(tmp.path());
    std::ostringstream log;
    std::string msg;
    CHECK(error_kind_of([&] { cmd_pretrain_lm(c, quiet(log)); }, &msg) == "MissingArtifact");
    CHECK(msg.find("emgllm gen") != std::string::npos);
    cmd_gen(c, quiet(log));
    CHECK(error_kind_of([&] { cmd_train(c, quiet(log)); }, &msg) == "MissingArtifact");
    CHECK(msg.find("emgllm pretrain-lm") != std::string::npos);
    cmd_pretrain_lm(c, quiet(log));
    CHECK(error_kind_of([&] { cmd_eval(c, quiet(log)); }, &msg) == "MissingArtifact");
    CHECK(msg.find("emgllm train") != std::string::npos);
    CHECK_THROWS_AS(run_command("fly", c, quiet(log)), ParameterError);
}

TEST_CASE("existing outputs need --force") {
    testing::TempDir tmp("cli_force");
    const RunConfig c = small(tmp.path());
    std::ostringstream log;
    cmd_gen(c, quiet(log));
    CHECK(error_kind_of([&] { cmd_gen(c, quiet(log)); }) == "OutputExists");
    const fs::path stray = c.root() / "corpus" / "stray.txt";
    std::ofstream(stray) << "x";
    cmd_gen(c, quiet(log, true));
    CHECK_FALSE(fs::exists(stray));
    CHECK(fs::exists(c.root() / "corpus" / "manifest.jsonl"));
}

TEST_CASE("commands chain from generation to evaluation") {
    testing::TempDir tmp("cli_chain");
    const RunConfig c = small(tmp.path());
    std::ostringstream log;
    cmd_gen(c, quiet(log));

    CommandOptions fo = quiet(log);
    fo.jobs = 3;
    cmd_featurize(c, fo);
    const Json index = read_json(c.root() / "features" / "index.json");
    CHECK(index["cols"] == 112);
    CHECK(index["frame_rate"].get<double>() == doctest::Approx(100.0));
    CHECK(index["utterances"].size() == 20);
    for (const auto& u : index["utterances"]) {
        const auto p = c.root() / "features" / (u["utterance_id"].get<std::string>() + ".f32");
        CHECK(fs::file_size(p) == static_cast<std::uintmax_t>(u["rows"].get<int>()) * 112 * 4);
    }

    cmd_pretrain_lm(c, quiet(log));
    const Json pre = read_json(c.root() / "lm" / "pretrain.json");
    CHECK(pre["final_heldout_loss"].get<double>() < pre["initial_heldout_loss"].get<double>());

    cmd_train(c, quiet(log));
    const fs::path tdir = c.root() / "train";
    CHECK(fs::exists(tdir / "fold0" / "checkpoint.json"));
    CHECK(fs::exists(tdir / "fold1" / "history.csv"));
    const Json summary = read_json(tdir / "summary.json");
    CHECK(summary.contains("untrained_test"));
    CHECK(summary["test"]["wer_mean"].get<double>() >= 0.0);
    const Json man = read_json(tdir / "run_manifest.json");
    CHECK(man["command"] == "train");
    CHECK(man["config_hash"] == config_hash(c));
    CHECK(man["seeds"]["train"] == c.train.seed);
    bool listed = false;
    for (const auto& f : man["files"]) {
        listed = listed || f["path"] == "metrics_test.csv";
    }
    CHECK(listed);

    std::ifstream hist(tdir / "fold0" / "history.csv");
    std::string header;
    std::getline(hist, header);
    CHECK(header == "run_id,epoch,split,loss,wer");

    CommandOptions oracle = quiet(log);
    oracle.oracle = true;
    cmd_eval(c, oracle);
    CHECK(read_json(c.root() / "eval" / "summary.json")["test"]["wer_mean"].get<double>() == 0.0);

    CommandOptions one = quiet(log, true);
    one.checkpoint = tdir / "fold1" / "checkpoint.json";
    cmd_eval(c, one);
    const Json ev = read_json(c.root() / "eval" / "summary.json");
    REQUIRE(ev["val"].size() == 1);
    CHECK(ev["val"][0]["fold"] == 1);
    CHECK(ev["val"][0]["val_wer"].get<double>() ==
          doctest::Approx(ev["val"][0]["recorded_val_wer"].get<double>()));
}
