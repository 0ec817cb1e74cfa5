// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <map>
#include <random>
#include <set>

#include "../support/temp_dir.hpp"
#include "doctest.h"
#include "emgllm/corpus/corpus.hpp"

using namespace emgllm;
using namespace emgllm::corpus;

namespace {

SyntheticConfig small_config(int n, std::uint64_t seed = 5) {
    SyntheticConfig c;
    c.n_utterances = n;
    c.seed = seed;
    return c;
}

int word_id(const std::vector<std::string>& vocab, const std::string& w) {
    return static_cast<int>(std::find(vocab.begin(), vocab.end(), w) - vocab.begin());
}

}  // namespace

TEST_CASE("builtin vocabulary has 67 distinct words") {
    const auto& v = builtin_vocabulary();
    CHECK(v.size() == 67);
    CHECK(std::set<std::string>(v.begin(), v.end()).size() == 67);
    for (const auto& w : v) {
        CHECK(normalize_transcript(w) == w);
    }
}

TEST_CASE("default synthetic corpus") {
    const auto m = generate_synthetic_corpus(SyntheticConfig{});
    CHECK(m.utterances.size() == 500);
    CHECK(m.vocabulary.size() == 67);
    CHECK(m.speakers.size() == 1);
    double words = 0;
    for (const auto& u : m.utterances) {
        CHECK(u.recording.length() >= u.recording.sample_rate * 0.2);
        CHECK(u.recording.channels() == 8);
        CHECK(u.word_count >= 1);
        CHECK(u.word_count == static_cast<int>(split_words(u.transcript).size()));
        words += u.word_count;
        for (float v : u.recording.signal.values()) {
            REQUIRE(std::isfinite(v));
        }
    }
    CHECK(words / 500 == doctest::Approx(4.0).epsilon(0.1));
    double secs = 0;
    for (const auto& u : m.utterances) {
        secs += static_cast<double>(u.recording.length()) / u.recording.sample_rate;
    }
    CHECK(m.total_minutes() == doctest::Approx(secs / 60.0));
}

TEST_CASE("generation is deterministic under a seed") {
    const auto a = generate_synthetic_corpus(small_config(20));
    const auto b = generate_synthetic_corpus(small_config(20));
    const auto c = generate_synthetic_corpus(small_config(20, 6));
    REQUIRE(a.utterances.size() == b.utterances.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < a.utterances.size(); ++i) {
        CHECK(a.utterances[i].transcript == b.utterances[i].transcript);
        CHECK(a.utterances[i].recording.signal == b.utterances[i].recording.signal);
        any_diff |= !(a.utterances[i].recording.signal == c.utterances[i].recording.signal);
    }
    CHECK(any_diff);
}

TEST_CASE("noise-free unwarped renders are reproducible per word sequence") {
    SyntheticConfig cfg;
    cfg.noise_sigma = 0;
    cfg.warp = 0;
    const auto sp = make_speaker(cfg, 0);
    const auto& vocab = builtin_vocabulary();
    const std::vector<int> yes{word_id(vocab, "yes")};
    CHECK(render_utterance(sp, yes, cfg, 1) == render_utterance(sp, yes, cfg, 2));

    const std::vector<int> a{word_id(vocab, "monday"), word_id(vocab, "at"), word_id(vocab, "two")};
    const std::vector<int> b{word_id(vocab, "monday"), word_id(vocab, "at"), word_id(vocab, "ten")};
    CHECK(render_utterance(sp, a, cfg, 3) == render_utterance(sp, a, cfg, 4));
    CHECK_FALSE(render_utterance(sp, a, cfg, 3) == render_utterance(sp, b, cfg, 3));
}

TEST_CASE("speaker profiles") {
    SyntheticConfig cfg;
    cfg.n_speakers = 4;
    cfg.n_utterances = 1000;
    cfg.max_word_seconds = 0.3;  // keeps this case quick
    cfg.min_word_seconds = 0.3;
    const auto m = generate_synthetic_corpus(cfg);
    REQUIRE(m.speakers.size() == 4);
    std::map<std::string, int> counts;
    for (const auto& u : m.utterances) {
        ++counts[u.recording.speaker_id];
    }
    for (const auto& [spk, n] : counts) {
        CHECK(n == doctest::Approx(250).epsilon(0.05));
    }
    const auto s0 = make_speaker(cfg, 0);
    const auto s1 = make_speaker(cfg, 1);
    CHECK_FALSE(s0.gains == s1.gains);
    CHECK_FALSE(s0.templates[0] == s1.templates[0]);
    for (float g : s0.gains) {
        CHECK(g >= 0.5f);
        CHECK(g <= 2.0f);
    }
}

TEST_CASE("templates are band limited below a quarter of the sample rate") {
    SyntheticConfig cfg;
    const auto sp = make_speaker(cfg, 0);
    // Naive DFT power above sr/4 is a tiny share of the total.
    for (int w = 0; w < 5; ++w) {
        const auto& tpl = sp.templates[static_cast<std::size_t>(w)];
        const int n = tpl.rows();
        double low = 0, high = 0;
        for (int k = 0; k <= n / 2; ++k) {
            double re = 0, im = 0;
            for (int t = 0; t < n; ++t) {
                re += tpl.at(t, 0) * std::cos(2 * M_PI * k * t / n);
                im -= tpl.at(t, 0) * std::sin(2 * M_PI * k * t / n);
            }
            const double p = re * re + im * im;
            (k * cfg.sample_rate / n < cfg.sample_rate / 4 ? low : high) += p;
        }
        CHECK(high / (low + high) < 1e-3);
    }
}

TEST_CASE("generation rejects bad parameters") {
    SyntheticConfig cfg;
    cfg.words_per_utterance_mean = 0.5;
    CHECK_THROWS_AS(generate_synthetic_corpus(cfg), ParameterError);
    cfg = SyntheticConfig{};
    cfg.vocab_size = 1;
    CHECK_THROWS_AS(generate_synthetic_corpus(cfg), ParameterError);
}

TEST_CASE("save and load round trip") {
    testing::TempDir dir("corpus");
    const auto m = generate_synthetic_corpus(small_config(6));
    save_corpus(m, dir.path());
    const auto back = load_corpus(dir.path());
    CHECK(back.vocabulary == m.vocabulary);
    CHECK(back.speakers == m.speakers);
    REQUIRE(back.utterances.size() == m.utterances.size());
    for (std::size_t i = 0; i < m.utterances.size(); ++i) {
        CHECK(back.utterances[i].id() == m.utterances[i].id());
        CHECK(back.utterances[i].transcript == m.utterances[i].transcript);
        CHECK(back.utterances[i].recording.signal == m.utterances[i].recording.signal);
        CHECK(back.utterances[i].recording.sample_rate == m.utterances[i].recording.sample_rate);
    }
    CHECK(load_corpus(dir.path() / "manifest.jsonl").utterances.size() == 6);
}

TEST_CASE("hand built corpus fixture") {
    testing::TempDir dir("fixture");
    std::filesystem::create_directories(dir.path() / "sig");
    {
        std::ofstream v(dir.path() / "vocab.txt");
        v << "yes\nno\nmonday\n";
        std::ofstream m(dir.path() / "manifest.jsonl");
        m << R"({"utterance_id":"a","speaker_id":"s","transcript":"yes no monday","signal_file":"sig/a.f32","sample_rate":800,"channels":2,"modality":"unvoiced"})"
          << "\n"
          << R"({"utterance_id":"b","speaker_id":"s","transcript":"no","signal_file":"sig/b.f32","sample_rate":800,"channels":2,"modality":"unvoiced"})"
          << "\n";
    }
    write_f32(dir.path() / "sig/a.f32", Tensor<float>({200, 2}, 0.5f));
    write_f32(dir.path() / "sig/b.f32", Tensor<float>({160, 2}, -1.0f));
    const auto m = load_corpus(dir.path());
    REQUIRE(m.utterances.size() == 2);
    CHECK(m.utterances[0].word_count == 3);
    CHECK(m.utterances[1].word_count == 1);
    CHECK(m.utterances[0].recording.length() == 200);
    CHECK(m.total_minutes() == doctest::Approx((200 + 160) / 800.0 / 60.0));

    std::filesystem::remove(dir.path() / "sig/b.f32");
    CHECK_THROWS_WITH_AS(load_corpus(dir.path()), doctest::Contains("missing signal"),
                         MissingArtifactError);
}

TEST_CASE("schema violations name field and line") {
    testing::TempDir dir("schema");
    {
        std::ofstream v(dir.path() / "vocab.txt");
        v << "yes\n";
        std::ofstream m(dir.path() / "manifest.jsonl");
        m << R"({"utterance_id":"a","speaker_id":"s","transcript":"yes","signal_file":"a.f32","sample_rate":800,"channels":1,"modality":"unvoiced"})"
          << "\n"
          << R"({"utterance_id":"b","speaker_id":"s","signal_file":"b.f32","sample_rate":800,"channels":1,"modality":"unvoiced"})"
          << "\n";
    }
    write_f32(dir.path() / "a.f32", Tensor<float>({200, 1}));
    try {
        load_corpus(dir.path());
        FAIL("expected schema error");
    } catch (const SchemaError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("line 2") != std::string::npos);
        CHECK(msg.find("transcript") != std::string::npos);
    }
}

TEST_CASE("split folds") {
    SUBCASE("8:1:1 on 500") {
        const auto m = generate_synthetic_corpus(small_config(500));
        const auto folds = split_folds(m, {8, 1, 1}, 3, 1);
        REQUIRE(folds.size() == 3);
        std::set<std::string> all_tests;
        for (const auto& f : folds) {
            CHECK(f.train.size() == 400);
            CHECK(f.val.size() == 50);
            CHECK(f.test.size() == 50);
            std::set<std::string> seen;
            for (const auto* part : {&f.train, &f.val, &f.test}) {
                for (const auto& id : *part) {
                    CHECK(seen.insert(id).second);
                }
            }
            CHECK(seen.size() == 500);
            for (const auto& id : f.test) {
                CHECK(all_tests.insert(id).second);
            }
        }
        const auto again = split_folds(m, {8, 1, 1}, 3, 1);
        CHECK(again[1].test == folds[1].test);
    }
    SUBCASE("all train") {
        const auto m = generate_synthetic_corpus(small_config(10));
        const auto folds = split_folds(m, {1, 0, 0}, 1, 1);
        CHECK(folds[0].train.size() == 10);
        CHECK(folds[0].val.empty());
        CHECK(folds[0].test.empty());
    }
    SUBCASE("three disjoint test sets of three") {
        const auto m = generate_synthetic_corpus(small_config(30));
        const auto folds = split_folds(m, {8, 1, 1}, 3, 9);
        std::set<std::string> tests;
        for (const auto& f : folds) {
            CHECK(f.test.size() == 3);
            tests.insert(f.test.begin(), f.test.end());
        }
        CHECK(tests.size() == 9);
    }
    SUBCASE("too many folds") {
        const auto m = generate_synthetic_corpus(small_config(10));
        CHECK_THROWS_AS(split_folds(m, {1, 1, 1}, 4, 0), ParameterError);
    }
}

TEST_CASE("subsample minutes") {
    const auto m = generate_synthetic_corpus(SyntheticConfig{});
    const auto ids = m.ids();
    const double total = m.total_minutes();
    CHECK(total == doctest::Approx(26.0).epsilon(0.1));
    const double target = 6.0;
    const auto sub = subsample_minutes(ids, m, target, 4);
    double mins = 0;
    for (const auto& id : sub) {
        mins += m.find(id).recording.seconds() / 60.0;
    }
    CHECK(mins <= target + 1e-9);
    CHECK(mins > 5.0);
    CHECK(subsample_minutes(ids, m, target, 4) == sub);
    CHECK(subsample_minutes(ids, m, total * 10, 4) == ids);

    const std::vector<std::string> one{ids[0]};
    CHECK(subsample_minutes(one, m, m.find(ids[0]).recording.seconds() / 60.0, 1) == one);
    CHECK_THROWS(subsample_minutes({}, m, 1.0, 1));
}

TEST_CASE("normalize transcript") {
    CHECK(normalize_transcript("Hello, World!") == "hello world");
    CHECK(normalize_transcript("already clean") == "already clean");
    CHECK(normalize_transcript("It's 2-PM.") == "its 2pm");
    CHECK(normalize_transcript("  a \t b  ") == "a b");
    CHECK(normalize_transcript("!!!") == "");

    std::mt19937 rng(3);
    const std::string alphabet = "aZ 9.,'-!\t?;:()xyQ ";
    std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
    for (int i = 0; i < 500; ++i) {
        std::string s;
        for (int j = 0; j < 30; ++j) {
            s.push_back(alphabet[pick(rng)]);
        }
        const auto once = normalize_transcript(s);
        CHECK(normalize_transcript(once) == once);
    }
}
