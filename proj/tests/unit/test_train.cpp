// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>

#include "../support/temp_dir.hpp"
#include "doctest.h"
#include "emgllm/train/config_json.hpp"
#include "emgllm/train/train.hpp"

using namespace emgllm;
using namespace emgllm::train;

namespace {

struct Fixture {
    corpus::CorpusManifest corpus;
    lm::Vocabulary vocab;
    lm::TinyLm<float> lm;
    InputPipeline pipeline;
    std::vector<Example> train, val;

    static corpus::SyntheticConfig corpus_config() {
        corpus::SyntheticConfig c;
        c.n_utterances = 14;
        c.seed = 4;
        return c;
    }
    static lm::TinyLmConfig lm_config() {
        lm::TinyLmConfig c;
        c.embed_dim = 16;
        c.layers = 1;
        c.heads = 2;
        c.ff_dim = 32;
        return c;
    }

    Fixture()
        : corpus(corpus::generate_synthetic_corpus(corpus_config())),
          vocab(corpus.vocabulary),
          lm(lm_config(), 1) {
        lm.freeze();
        const auto ids = corpus.ids();
        const std::vector<std::string> tr(ids.begin(), ids.begin() + 11), va(ids.begin() + 11, ids.end());
        pipeline.fit(corpus, tr);
        train = make_examples(corpus, tr, pipeline, vocab);
        val = make_examples(corpus, va, pipeline, vocab);
    }

    adaptor::AdaptorConfig adaptor_config() const {
        adaptor::AdaptorConfig a;
        a.conv_channels = 8;
        a.backbone_hidden = 8;
        a.inner_dim = 16;
        a.output_dim = 16;
        return a;
    }
};

TrainConfig quick(int epochs, int batch) {
    TrainConfig c;
    c.max_epochs = epochs;
    c.batch_size = batch;
    c.lr_max = 1e-3;
    c.val_wer_every = 0;
    c.seed = 3;
    return c;
}

}  // namespace

TEST_CASE("optimizer steps per epoch are ceil(n / B)") {
    Fixture f;
    for (int batch : {1, 3, 4, 11, 16}) {
        EmgToText model(f.adaptor_config(), objective::LossSpec{}, f.lm, {}, 2);
        const auto r = train_run(model, f.train, f.val, quick(2, batch), {}, f.vocab);
        CHECK(r.optimizer_steps == 2 * ((11 + batch - 1) / batch));
        CHECK(r.history.size() == 2);
        CHECK(r.lm_unchanged);
    }
}

TEST_CASE("training is deterministic and lowers the loss") {
    Fixture f;
    auto run = [&] {
        EmgToText model(f.adaptor_config(), objective::LossSpec{}, f.lm, {}, 5);
        auto cfg = quick(12, 4);
        cfg.lr_max = 3e-3;
        return train_run(model, f.train, f.val, cfg, {}, f.vocab);
    };
    const auto a = run(), b = run();
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
        CHECK(a.history[i].val_loss == b.history[i].val_loss);
    }
    CHECK(a.history.back().train_loss < a.history.front().train_loss);
    CHECK(a.best_val_loss <= a.initial_val_loss);
}

TEST_CASE("ctc arm trains with the feasible length policy") {
    Fixture f;
    objective::LossSpec spec;
    spec.kind = objective::LossKind::Ctc;
    spec.ctc_length_policy = objective::CtcLengthPolicy::Feasible;
    EmgToText model(f.adaptor_config(), spec, f.lm, {}, 6);
    auto cfg = quick(2, 4);
    cfg.loss = spec;
    const auto r = train_run(model, f.train, f.val, cfg, {}, f.vocab);
    CHECK(std::isfinite(r.best_val_loss));
    CHECK(model.head_params().count(true) > 0);
}

TEST_CASE("checkpoint round trip") {
    Fixture f;
    testing::TempDir dir("ckpt");
    EmgToText model(f.adaptor_config(), objective::LossSpec{}, f.lm, {}, 7);
    f.lm.apply_lora(lm::LoraConfig{2, 4.0, {"q", "v"}}, 1);
    train_run(model, f.train, f.val, quick(1, 4), {}, f.vocab);
    CheckpointInfo info;
    info.epoch = 1;
    info.best_val_loss = 2.5;
    info.run_config = {{"run_id", "t"}};
    const auto path = dir.path() / "ckpt.json";
    save_checkpoint(path, model, f.pipeline, info);

    const auto header = read_checkpoint_header(path);
    CHECK(header.info.epoch == 1);
    CHECK(header.info.best_val_loss == 2.5);
    REQUIRE(header.lora.has_value());
    CHECK(header.lora->rank == 2);

    Fixture g;
    g.lm.apply_lora(*header.lora, 99);
    EmgToText other(header.adaptor, header.loss, g.lm, {}, 123);
    InputPipeline pipe;
    load_checkpoint(path, other, pipe);
    CHECK(pipe.stats().mean == f.pipeline.stats().mean);
    const auto& x = f.val[0].input;
    CHECK(model.unprompted_logits(x) == other.unprompted_logits(x));
    CHECK(mean_loss(model, f.val) == mean_loss(other, f.val));

    std::filesystem::resize_file(dir.path() / "ckpt.bin", 64);
    CHECK_THROWS_WITH(load_checkpoint(path, other, pipe), doctest::Contains("truncated"));
    CHECK_THROWS_AS(read_checkpoint_header(dir.path() / "nothing.json"), MissingArtifactError);
}

TEST_CASE("config readers reject unknown keys") {
    TrainConfig t;
    t.batch_size = 5;
    t.lr_max = 2e-4;
    TrainConfig back;
    from_json(to_json(t), "train", back);
    CHECK(back.batch_size == 5);
    CHECK(back.lr_max == 2e-4);

    Json j = to_json(adaptor::AdaptorConfig{});
    j["stem_strid"] = 3;
    adaptor::AdaptorConfig a;
    CHECK_THROWS_WITH_AS(from_json(j, "adaptor", a), doctest::Contains("adaptor.stem_strid"),
                         SchemaError);
    Json bad = to_json(decode::DecodeConfig{});
    bad["beam_width"] = "wide";
    decode::DecodeConfig d;
    CHECK_THROWS_AS(from_json(bad, "decode", d), SchemaError);

    objective::LossSpec l;
    from_json(Json{{"kind", "ctc"}, {"ctc_length_policy", "feasible"}}, "loss", l);
    CHECK(l.kind == objective::LossKind::Ctc);
    CHECK(l.ctc_length_policy == objective::CtcLengthPolicy::Feasible);
    CHECK_THROWS_AS(from_json(Json{{"kind", "mse"}}, "loss", l), ParameterError);
}
