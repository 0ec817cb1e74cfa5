// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

// End-to-end acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--work DIR] [--only 1,5,...]
//
// Criteria 5-8 share a corpus and pretrained LM under DIR/main; DIR/main and
// DIR/repro are cleared first.

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "../support/gradcheck_support.hpp"
#include "emgllm/adaptor/adaptor.hpp"
#include "emgllm/cli/commands.hpp"
#include "emgllm/decode/decode.hpp"
#include "emgllm/error.hpp"
#include "emgllm/lm/lm.hpp"
#include "emgllm/objective/objective.hpp"
#include "emgllm/signal/signal.hpp"

using namespace emgllm;
namespace fs = std::filesystem;
using numerics::Rng;
using numerics::Tape;
using numerics::Tensor;
using numerics::uniform_tensor;
using numerics::Var;
using cli::Json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 4) {
    std::ostringstream os;
    os << std::setprecision(digits) << v;
    return os.str();
}

Json read_json(const fs::path& p) {
    std::ifstream is(p);
    if (!is) {
        throw IoError("cannot read " + p.string());
    }
    return Json::parse(is);
}

// ---------------------------------------------------------------- 1

Outcome gradient_suite() {
    using namespace numerics;
    using testing::check_gradients;
    constexpr int kInstances = 20;
    std::map<std::string, double> worst;
    std::map<std::string, int> count;
    Rng rng(101);
    auto record = [&](const std::string& name, const testing::GradCheckResult& r) {
        worst[name] = std::max(worst[name], r.max_rel_error);
        ++count[name];
    };
    for (int i = 0; i < kInstances; ++i) {
        const std::uint64_t seed = 1000 + static_cast<std::uint64_t>(i);
        const int rows = 3 + i % 5, cols = 2 + i % 4;
        const auto x = uniform_tensor<double>({rows, cols}, 1.0, rng);
        const auto y = uniform_tensor<double>({rows, cols}, 1.0, rng);
        const auto w = uniform_tensor<double>({cols, 3}, 1.0, rng);
        const auto b = uniform_tensor<double>({3}, 1.0, rng);
        const double tau = 0.5 + 0.1 * (i % 6);

        record("add", check_gradients([](Tape<double>&, const auto& v) { return add(v[0], v[1]); }, {x, y}, seed, 1e-4));
        record("mul", check_gradients([](Tape<double>&, const auto& v) { return mul(v[0], v[1]); }, {x, y}, seed, 1e-4));
        record("scale", check_gradients([](Tape<double>&, const auto& v) { return scale(v[0], -1.7); }, {x}, seed, 1e-4));
        record("sum_squares", check_gradients([](Tape<double>&, const auto& v) { return sum_squares(v[0]); }, {x}, seed, 1e-4));
        record("matmul", check_gradients([](Tape<double>&, const auto& v) { return matmul(v[0], v[1]); }, {x, w}, seed, 1e-4));
        record("linear", check_gradients([](Tape<double>&, const auto& v) { return linear(v[0], v[1], v[2]); }, {x, w, b}, seed, 1e-4));
        record("gelu", check_gradients([](Tape<double>&, const auto& v) { return gelu(v[0]); }, {x}, seed, 1e-4));
        record("tanh", check_gradients([](Tape<double>&, const auto& v) { return numerics::tanh(v[0]); }, {x}, seed, 1e-4));
        record("softmax_temperature",
               check_gradients([tau](Tape<double>&, const auto& v) { return softmax_temperature(v[0], tau); }, {x}, seed, 1e-4));
        record("log_softmax_temperature",
               check_gradients([tau](Tape<double>&, const auto& v) { return log_softmax_temperature(v[0], tau); }, {x}, seed, 1e-4));
        const auto gamma = uniform_tensor<double>({cols}, 1.0, rng);
        const auto beta = uniform_tensor<double>({cols}, 1.0, rng);
        record("layer_norm",
               check_gradients([](Tape<double>&, const auto& v) { return layer_norm(v[0], v[1], v[2]); }, {x, gamma, beta}, seed, 1e-4));
        const std::vector<int> ids = {i % 5, (i + 2) % 5, i % 5, 4};
        record("embedding", check_gradients([&ids](Tape<double>&, const auto& v) { return embedding(v[0], ids); },
                                            {uniform_tensor<double>({5, cols}, 1.0, rng)}, seed, 1e-4));
        record("concat_rows",
               check_gradients([](Tape<double>&, const auto& v) { return concat_rows<double>({v[0], v[1]}); }, {x, y}, seed, 1e-4));
        record("concat_cols", check_gradients([](Tape<double>&, const auto& v) { return concat_cols(v[0], v[1]); }, {x, y}, seed, 1e-4));
        record("slice_rows", check_gradients([rows](Tape<double>&, const auto& v) { return slice_rows(v[0], 1, rows); }, {x}, seed, 1e-4));
        const std::vector<int> sel = {rows - 1, 0, rows - 1};
        record("select_rows", check_gradients([&sel](Tape<double>&, const auto& v) { return select_rows(v[0], sel); }, {x}, seed, 1e-4));
        record("mean_rows", check_gradients([](Tape<double>&, const auto& v) { return mean_rows(v[0]); }, {x}, seed, 1e-4));
        const int factor = 1 + i % 3;
        record("interpolate_rows",
               check_gradients([factor](Tape<double>&, const auto& v) { return interpolate_rows(v[0], factor); }, {x}, seed, 1e-4));

        const int k = 1 + i % 4, stride = 1 + i % 3, out_ch = 2 + i % 2;
        const auto sig = uniform_tensor<double>({5 + i % 9, cols}, 1.0, rng);
        const auto kern = uniform_tensor<double>({k, cols, out_ch}, 1.0, rng);
        const auto kb = uniform_tensor<double>({out_ch}, 1.0, rng);
        const Padding pad = i % 2 ? Padding::SameLeft : Padding::None;
        record("conv1d", check_gradients([stride, pad](Tape<double>&, const auto& v) { return conv1d(v[0], v[1], v[2], stride, pad); },
                                         {sig, kern, kb}, seed, 1e-4));

        const int hidden = 2 + i % 3;
        const auto wih = uniform_tensor<double>({cols, 4 * hidden}, 0.8, rng);
        const auto whh = uniform_tensor<double>({hidden, 4 * hidden}, 0.8, rng);
        const auto lb = uniform_tensor<double>({4 * hidden}, 0.5, rng);
        const bool reverse = i % 2 == 1;
        record("lstm", check_gradients([reverse](Tape<double>&, const auto& v) { return lstm(v[0], v[1], v[2], v[3], reverse); },
                                       {x, wih, whh, lb}, seed, 1e-4));

        const int heads = 1 + i % 2;
        const auto q = uniform_tensor<double>({rows, 4 * heads}, 1.0, rng);
        const auto kk = uniform_tensor<double>({rows, 4 * heads}, 1.0, rng);
        const auto vv = uniform_tensor<double>({rows, 4 * heads}, 1.0, rng);
        const int offset = i % 4;
        record("rotary", check_gradients([heads, offset](Tape<double>&, const auto& v) { return rotary(v[0], heads, offset); }, {q},
                                         seed, 1e-4));
        const bool causal = i % 2 == 0;
        record("attention",
               check_gradients([heads, causal](Tape<double>&, const auto& v) { return attention(v[0], v[1], v[2], heads, causal); },
                               {q, kk, vv}, seed, 1e-4));

        const int classes = 3 + i % 3;
        const auto z = uniform_tensor<double>({rows, classes}, 2.0, rng);
        std::vector<int> targets;
        for (int r = 0; r < rows; ++r) {
            targets.push_back((r * 7 + i) % classes);
        }
        record("ce_temperature_loss",
               check_gradients([&targets, tau](Tape<double>&, const auto& v) { return objective::ce_temperature_loss(v[0], targets, tau); },
                               {z}, seed, 1e-4));
        const int blank = classes - 1;
        std::vector<int> label;
        for (int r = 0; r < 1 + i % 3; ++r) {
            label.push_back((r + i) % blank);
        }
        const auto zc = uniform_tensor<double>({2 * static_cast<int>(label.size()) + 2 + i % 3, classes}, 2.0, rng);
        record("ctc_loss",
               check_gradients([&label, blank](Tape<double>&, const auto& v) { return objective::ctc_loss(v[0], label, blank); },
                               {zc}, seed, 1e-4));
    }

    // Adaptor -> prompt assembly -> LM (with LoRA) -> tempered CE, all parameters.
    double composed = 0;
    const std::vector<adaptor::Backbone> backbones = {adaptor::Backbone::NoneFc, adaptor::Backbone::Lstm,
                                                      adaptor::Backbone::Bilstm, adaptor::Backbone::TransformerSin,
                                                      adaptor::Backbone::TransformerRope};
    for (int i = 0; i < kInstances; ++i) {
        adaptor::AdaptorConfig ac;
        ac.backbone = backbones[static_cast<std::size_t>(i) % backbones.size()];
        ac.input_dim = 3;
        ac.stem_stride = 2;
        ac.stem_kernel = 3;
        ac.res_blocks = 1 + i % 2;
        ac.conv_channels = 3;
        ac.backbone_hidden = 2;
        ac.backbone_heads = 1;
        ac.inner_dim = 4;
        ac.output_dim = 4;
        adaptor::Adaptor<double> ad(ac, 50 + static_cast<std::uint64_t>(i));
        lm::TinyLmConfig lc;
        lc.vocab_size = 7;
        lc.embed_dim = 4;
        lc.layers = 1;
        lc.heads = 2;
        lc.ff_dim = 6;
        lc.max_seq_len = 64;
        lm::TinyLm<double> model(lc, 60 + static_cast<std::uint64_t>(i));
        model.freeze();
        model.apply_lora(lm::LoraConfig{1, 2.0, {"q", "v"}}, 70 + static_cast<std::uint64_t>(i));
        for (auto& p : model.params()) {
            if (p.name.find("lora_b") != std::string::npos) {
                p.value = uniform_tensor<double>(p.value.shape(), 0.3, rng);
            }
        }
        const auto input = uniform_tensor<double>({16 + i % 9, 3}, 1.0, rng);
        const std::vector<int> target = {4 + i % 3, 5, 1};
        const lm::PromptTemplate prompt;
        auto loss_of = [&](bool grad) {
            Tape<double> tape(grad);
            auto e = ad.forward(tape, input);
            auto in = lm::assemble_input<double>(tape, prompt, e, target, model);
            auto logits = model.forward(tape, in.input);
            auto loss = objective::ce_temperature_loss(select_rows(logits, in.loss_positions), in.loss_targets, 0.8);
            if (grad) {
                tape.backward(loss);
            }
            return loss.value()[0];
        };
        ad.params().zero_grad();
        model.params().zero_grad();
        loss_of(true);
        auto check_set = [&](auto& set) {
            for (auto& p : set) {
                if (!p.trainable) {
                    continue;
                }
                const Tensor<double> analytic = p.has_grad ? p.grad : Tensor<double>(p.value.shape());
                std::function<double(const Tensor<double>&)> f = [&](const Tensor<double>& v) {
                    const auto saved = p.value;
                    p.value = v;
                    const double out = loss_of(false);
                    p.value = saved;
                    return out;
                };
                const auto fd = finite_difference_gradient(f, p.value, 1e-5);
                composed = std::max(composed, max_relative_error(analytic, fd, 1e-4));
            }
        };
        check_set(ad.params());
        check_set(model.params());
    }

    std::string failing;
    double prim = 0;
    for (const auto& [name, e] : worst) {
        prim = std::max(prim, e);
        if (e >= 1e-4 || count[name] < kInstances) {
            failing += " " + name;
        }
    }
    const bool ok = failing.empty() && composed < 1e-3;
    return {ok, std::to_string(worst.size()) + " primitives x " + std::to_string(kInstances) +
                    " instances, worst rel err " + fmt(prim, 3) + "; composed x " + std::to_string(kInstances) +
                    " worst " + fmt(composed, 3) + (failing.empty() ? "" : "; failing:" + failing)};
}

// ---------------------------------------------------------------- 2

Outcome shape_contract() {
    adaptor::AdaptorConfig c;  // raw input, total stride 48
    c.conv_channels = 4;
    c.backbone_hidden = 4;
    c.backbone_heads = 2;
    c.inner_dim = 4;
    c.output_dim = 4;
    const std::vector<adaptor::Backbone> backbones = {adaptor::Backbone::NoneFc, adaptor::Backbone::Lstm,
                                                      adaptor::Backbone::Bilstm, adaptor::Backbone::TransformerSin,
                                                      adaptor::Backbone::TransformerRope};
    std::vector<adaptor::Adaptor<float>> models;
    for (auto b : backbones) {
        c.backbone = b;
        models.emplace_back(c, 1);
    }
    Rng rng(7);
    const auto signal = uniform_tensor<float>({5000, 8}, 1.0, rng);
    int mismatches = 0, exact = 0;
    for (int t = 48; t <= 5000; ++t) {
        auto& m = models[static_cast<std::size_t>(t) % models.size()];
        Tensor<float> x({t, 8});
        std::copy(signal.values().begin(), signal.values().begin() + static_cast<std::ptrdiff_t>(t) * 8, x.values().begin());
        Tape<float> tape(false);
        const int rows = m.forward(tape, x).rows();
        // Independent ceil composition over the stage strides 6, 2, 2, 2.
        int expect = t;
        for (int s : {6, 2, 2, 2}) {
            expect = (expect + s - 1) / s;
        }
        mismatches += rows != expect || rows != adaptor::output_length(t, m.config()) ? 1 : 0;
        if (t % 48 == 0) {
            mismatches += rows != t / 48 ? 1 : 0;
            ++exact;
        }
    }
    return {mismatches == 0 && c.total_downsample() == 48,
            "4953 lengths, " + std::to_string(exact) + " multiples of 48, " + std::to_string(mismatches) + " mismatches"};
}

// ---------------------------------------------------------------- 3

Outcome feature_contract() {
    Rng rng(9);
    corpus::EmgRecording r;
    r.sample_rate = 800.0;
    r.utterance_id = "a";
    r.signal = uniform_tensor<float>({640, 8}, 1.0, rng);
    const signal::FrameSpec spec;
    const auto f = signal::extract_features(r, spec);
    const bool dim_ok = f.frames.cols() == 112 && f.frames.rows() == (640 - spec.frame_length) / spec.hop + 1;

    double dft_err = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + trial % 31;
        const auto x = uniform_tensor<double>({n}, 1.0, rng);
        std::vector<double> xs(x.values().begin(), x.values().end());
        const auto mag = signal::dft_magnitudes(xs);
        if (static_cast<int>(mag.size()) != n / 2 + 1) {
            dft_err = 1e9;
            break;
        }
        for (int k = 0; k <= n / 2; ++k) {
            std::complex<double> s = 0;
            for (int t = 0; t < n; ++t) {
                s += xs[static_cast<std::size_t>(t)] * std::polar(1.0, -2.0 * M_PI * k * t / n);
            }
            dft_err = std::max(dft_err, std::abs(mag[static_cast<std::size_t>(k)] - std::abs(s)));
        }
    }

    bool trivial_ok = true;
    std::vector<float> out(signal::kFeaturesPerChannel);
    signal::frame_features(std::vector<double>(static_cast<std::size_t>(spec.frame_length), 0.0), spec, out);
    for (float v : out) {
        trivial_ok = trivial_ok && v == 0.0f;
    }
    for (double level : {1.0, -2.5}) {
        signal::frame_features(std::vector<double>(static_cast<std::size_t>(spec.frame_length), level), spec, out);
        // A constant frame has no high-frequency part, no crossings and only a DC bin.
        trivial_ok = trivial_ok && out[2] == 0.0f && out[3] == 0.0f && out[4] == 0.0f;
        trivial_ok = trivial_ok && std::abs(out[5] - std::abs(level) * spec.stft_size) < 1e-5;
        for (int b = 6; b < signal::kFeaturesPerChannel; ++b) {
            trivial_ok = trivial_ok && std::abs(out[static_cast<std::size_t>(b)]) < 1e-6;
        }
    }
    return {dim_ok && dft_err < 1e-5 && trivial_ok,
            "D=" + std::to_string(f.frames.cols()) + ", DFT max err " + fmt(dft_err, 3) + " over 200 frames, trivial frames " +
                (trivial_ok ? "exact" : "WRONG")};
}

// ---------------------------------------------------------------- 4

double brute_ctc(const Tensor<double>& z, const std::vector<int>& target, int blank) {
    const int frames = z.rows(), classes = z.cols();
    std::vector<std::vector<double>> p(static_cast<std::size_t>(frames));
    for (int t = 0; t < frames; ++t) {
        double s = 0;
        for (int c = 0; c < classes; ++c) {
            s += std::exp(z.at(t, c));
        }
        for (int c = 0; c < classes; ++c) {
            p[static_cast<std::size_t>(t)].push_back(std::exp(z.at(t, c)) / s);
        }
    }
    double total = 0;
    std::vector<int> path(static_cast<std::size_t>(frames));
    std::function<void(int, double)> walk = [&](int t, double prob) {
        if (t == frames) {
            std::vector<int> collapsed;
            int prev = -1;
            for (int c : path) {
                if (c != prev && c != blank) {
                    collapsed.push_back(c);
                }
                prev = c;
            }
            total += collapsed == target ? prob : 0.0;
            return;
        }
        for (int c = 0; c < classes; ++c) {
            path[static_cast<std::size_t>(t)] = c;
            walk(t + 1, prob * p[static_cast<std::size_t>(t)][static_cast<std::size_t>(c)]);
        }
    };
    walk(0, 1.0);
    return -std::log(total);
}

std::vector<std::vector<int>> sequences(int alphabet, int max_len) {
    std::vector<std::vector<int>> out = {{}};
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (static_cast<int>(out[i].size()) < max_len) {
            for (int a = 0; a < alphabet; ++a) {
                auto s = out[i];
                s.push_back(a);
                out.push_back(s);
            }
        }
    }
    return out;
}

int brute_edits(const std::vector<std::string>& a, std::size_t i, const std::vector<std::string>& b, std::size_t j) {
    if (i == a.size()) {
        return static_cast<int>(b.size() - j);
    }
    if (j == b.size()) {
        return static_cast<int>(a.size() - i);
    }
    return std::min({brute_edits(a, i + 1, b, j + 1) + (a[i] == b[j] ? 0 : 1), brute_edits(a, i + 1, b, j) + 1,
                     brute_edits(a, i, b, j + 1) + 1});
}

Outcome oracle_equivalences() {
    Rng rng(11);
    int ctc_cases = 0, ctc_bad = 0;
    for (int alphabet = 1; alphabet <= 3; ++alphabet) {
        for (int frames = 1; frames <= 6; ++frames) {
            for (const auto& target : sequences(alphabet, 2)) {
                if (frames < objective::ctc_min_length(target, objective::CtcLengthPolicy::Feasible)) {
                    continue;
                }
                const auto z = uniform_tensor<double>({frames, alphabet + 1}, 2.0, rng);
                Tape<double> tape(false);
                const double got =
                    objective::ctc_loss(tape.constant(z), target, alphabet, objective::CtcLengthPolicy::Feasible).value()[0];
                const double ref = brute_ctc(z, target, alphabet);
                ctc_bad += std::abs(got - ref) > 1e-9 * std::max(1.0, std::abs(ref)) ? 1 : 0;
                ++ctc_cases;
            }
        }
    }

    int beam_bad = 0;
    for (int i = 0; i < 100; ++i) {
        lm::TinyLmConfig c;
        c.vocab_size = 9;
        c.embed_dim = 8;
        c.layers = 1;
        c.heads = 2;
        c.ff_dim = 16;
        c.max_seq_len = 64;
        lm::TinyLm<float> m(c, 500 + static_cast<std::uint64_t>(i));
        for (auto& v : m.params().get("lm.head.weight").value.values()) {
            v *= 8.0f;  // keep argmax ties unlikely
        }
        m.freeze();
        const auto prefix = uniform_tensor<float>({3 + i % 4, 8}, 1.0, rng);
        const bool constrained = i % 2 == 0;
        const auto beams = decode::beam_search(m, prefix, decode::DecodeConfig{1, 8, 0.0, constrained});
        beam_bad += beams.size() != 1 || beams[0].tokens != decode::greedy_decode(m, prefix, 8, constrained) ? 1 : 0;
    }

    const std::vector<std::string> words = {"a", "b", "c"};
    int wer_pairs = 0, wer_bad = 0;
    const auto seqs = sequences(3, 4);
    std::vector<std::vector<std::string>> texts;
    for (const auto& s : seqs) {
        std::vector<std::string> t;
        for (int w : s) {
            t.push_back(words[static_cast<std::size_t>(w)]);
        }
        texts.push_back(t);
    }
    for (const auto& ref : texts) {
        for (const auto& hyp : texts) {
            const int expect = brute_edits(ref, 0, hyp, 0);
            const auto counts = decode::edit_counts(ref, hyp);
            bool ok = counts.errors() == expect &&
                      static_cast<int>(hyp.size()) - static_cast<int>(ref.size()) == counts.insertions - counts.deletions;
            if (!ref.empty()) {
                ok = ok && std::abs(decode::wer(ref, hyp) - static_cast<double>(expect) / ref.size()) < 1e-12;
            }
            wer_bad += ok ? 0 : 1;
            ++wer_pairs;
        }
    }
    return {ctc_bad == 0 && beam_bad == 0 && wer_bad == 0,
            "CTC " + std::to_string(ctc_cases - ctc_bad) + "/" + std::to_string(ctc_cases) + ", beam1=greedy " +
                std::to_string(100 - beam_bad) + "/100, WER " + std::to_string(wer_pairs - wer_bad) + "/" +
                std::to_string(wer_pairs) + " pairs"};
}

// ---------------------------------------------------------------- 5-8

struct MainRun {
    fs::path work;
    cli::RunConfig config;
    std::ostringstream log;
    bool have_corpus = false;
    std::optional<double> pretrain_seconds;

    cli::CommandOptions options() {
        cli::CommandOptions o;
        o.log = &log;
        o.force = true;
        return o;
    }

    void ensure_lm() {
        if (!have_corpus) {
            cli::cmd_gen(config, options());
            have_corpus = true;
        }
        if (!pretrain_seconds) {
            const auto t0 = Clock::now();
            cli::cmd_pretrain_lm(config, options());
            pretrain_seconds = seconds_since(t0);
        }
    }
};

cli::RunConfig main_config(const fs::path& work) {
    Json j = {{"run_id", "main"},
              {"output_dir", work.string()},
              {"seed", 0},
              {"train", {{"max_epochs", 120}}},
              {"experiment",
               {{"folds", 1}, {"ablation_max_epochs", 10}, {"sweep_max_epochs", 60}, {"sweep_minutes", {5.0, 10.0, 20.0}}}}};
    return cli::run_config_from_json(j);
}

Outcome end_to_end(MainRun& run) {
    run.ensure_lm();
    const auto t0 = Clock::now();
    cli::cmd_train(run.config, run.options());
    const double total = *run.pretrain_seconds + seconds_since(t0);
    const Json s = read_json(run.config.root() / "train" / "summary.json");
    const Json pre = read_json(run.config.root() / "lm" / "pretrain.json");
    const double wer = s["test"]["wer_mean"], base = s["untrained_test"]["wer_mean"];
    const bool ok = wer <= 0.15 && base > 0.8 && total < 1800.0 && run.config.train.max_epochs <= 200;
    return {ok, "test WER " + fmt(wer) + " (untrained " + fmt(base) + ") after " + std::to_string(run.config.train.max_epochs) +
                    " epochs; LM held-out loss " + fmt(pre["final_heldout_loss"].get<double>()) + "; " + fmt(total / 60.0, 3) +
                    " min incl. pretraining"};
}

Outcome ablation(MainRun& run) {
    run.ensure_lm();
    cli::cmd_ablate(run.config, run.options());
    const fs::path dir = run.config.root() / "ablate";
    std::ifstream csv(dir / "ablation.csv");
    std::string line;
    std::getline(csv, line);
    int rows = 0, improved = 0;
    std::set<std::string> losses;
    while (std::getline(csv, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            cells.push_back(cell);
        }
        ++rows;
        if (cells.size() >= 8 && cells[2] == "ok" && std::stod(cells[7]) < std::stod(cells[6])) {
            ++improved;
        }
        if (cells.size() >= 2) {
            losses.insert(cells[1]);
        }
    }
    std::cout << std::ifstream(dir / "ablation.txt").rdbuf();
    const bool ok = rows == 7 && improved == rows && losses.size() == 2 && fs::exists(dir / "ablation.txt");
    return {ok, std::to_string(improved) + "/" + std::to_string(rows) + " variants beat their untrained val loss"};
}

Outcome sweep(MainRun& run) {
    run.ensure_lm();
    cli::cmd_sweep(run.config, run.options());
    std::ifstream csv(run.config.root() / "sweep" / "sweep.csv");
    std::string header, line;
    std::getline(csv, header);
    std::vector<std::pair<double, double>> points;  // minutes, wer
    std::stringstream head(header);
    std::vector<std::string> names;
    for (std::string c; std::getline(head, c, ',');) {
        names.push_back(c);
    }
    const auto col = [&](const std::string& n) {
        return static_cast<std::size_t>(std::find(names.begin(), names.end(), n) - names.begin());
    };
    while (std::getline(csv, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) {
            cells.push_back(c);
        }
        points.emplace_back(std::stod(cells.at(col("minutes"))), std::stod(cells.at(col("wer_mean"))));
    }
    if (points.size() < 2) {
        return {false, "sweep produced " + std::to_string(points.size()) + " rows"};
    }
    const double ratio = points.back().first / points.front().first;
    std::string curve;
    for (const auto& [m, w] : points) {
        curve += " " + fmt(m, 3) + "min:" + fmt(w, 3);
    }
    const bool ok = ratio >= 3.5 && points.back().second <= points.front().second + 0.05;
    return {ok, "duration ratio " + fmt(ratio, 3) + ", WER by budget" + curve};
}

Outcome person_id(MainRun& run) {
    run.ensure_lm();
    const auto t0 = Clock::now();
    cli::cmd_pid(run.config, run.options());
    const double secs = seconds_since(t0);
    const Json r = read_json(run.config.root() / "pid" / "pid.json");
    const double probe = r["probe_accuracy"], e2e = r["end_to_end_accuracy"], shuffled = r["shuffled_label_accuracy"];
    const bool ok = r["speakers"] == 4 && probe >= 0.9 && e2e >= probe - 0.05 && std::abs(shuffled - 0.25) <= 0.15 && secs < 1200;
    return {ok, "probe " + fmt(probe) + ", end-to-end " + fmt(e2e) + ", shuffled labels " + fmt(shuffled) + " (chance 0.25), head-only " +
                    fmt(r["frozen_adaptor_head_accuracy"].get<double>()) + ", " +
                    fmt(secs / 60.0, 3) + " min"};
}

// ---------------------------------------------------------------- 9

Outcome calibration() {
    adaptor::AdaptorConfig c;
    c.conv_channels = 256;
    c.backbone_hidden = 256;
    c.backbone_layers = 2;
    c.inner_dim = 512;
    c.output_dim = 3072;
    const auto n = adaptor::Adaptor<float>(c, 0).param_count(true);
    const double rel = std::abs(static_cast<double>(n) - 5.94e6) / 5.94e6;
    const lm::DecoderShape llama;
    const lm::LoraConfig lora{16, 32.0, {"q", "v"}};
    const double frac = static_cast<double>(lm::lora_param_count(llama, lora)) /
                        static_cast<double>(lm::decoder_param_count(llama));
    return {rel <= 0.15 && frac >= 0.001 && frac <= 0.002,
            "BiLSTM adaptor at F=3072: " + std::to_string(n) + " params (" + fmt(100 * rel, 3) + "% off 5.94M); LoRA r16 q,v: " +
                fmt(100 * frac, 4) + "% of " + std::to_string(lm::decoder_param_count(llama))};
}

// ---------------------------------------------------------------- 10

std::map<std::string, std::string> snapshot(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) {
            continue;
        }
        std::ifstream is(e.path(), std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        if (e.path().filename() == "run_manifest.json") {
            Json m = Json::parse(bytes);
            m.erase("created_utc");
            bytes = m.dump();
        }
        files[fs::relative(e.path(), root).generic_string()] = bytes;
    }
    return files;
}

Outcome reproducibility(const fs::path& work) {
    Json j = Json::parse(R"({
        "run_id": "repro", "seed": 17,
        "corpus": {"n_utterances": 40},
        "adaptor": {"conv_channels": 8, "backbone_hidden": 8, "inner_dim": 16},
        "lm": {"model": {"embed_dim": 16, "layers": 1, "heads": 2, "ff_dim": 32},
               "pretrain": {"steps": 40, "batch_size": 8}, "text_sequences": 200},
        "train": {"max_epochs": 3, "val_wer_every": 1},
        "experiment": {"folds": 2}
    })");
    j["output_dir"] = work.string();
    const auto config = cli::run_config_from_json(j);
    std::ostringstream log;
    cli::CommandOptions o;
    o.log = &log;
    o.force = true;
    o.jobs = 2;
    std::vector<std::map<std::string, std::string>> runs;
    for (int rep = 0; rep < 2; ++rep) {
        for (const char* cmd : {"gen", "featurize", "pretrain-lm", "train", "eval"}) {
            cli::run_command(cmd, config, o);
        }
        runs.push_back(snapshot(config.root()));
    }
    int differing = 0;
    for (const auto& [path, bytes] : runs[0]) {
        const auto it = runs[1].find(path);
        differing += it == runs[1].end() || it->second != bytes ? 1 : 0;
    }
    differing += static_cast<int>(runs[1].size() > runs[0].size() ? runs[1].size() - runs[0].size() : 0);
    const bool has_ckpt = runs[0].count("train/fold0/checkpoint.json") && runs[0].count("eval/metrics_test.csv");
    return {differing == 0 && has_ckpt, std::to_string(runs[0].size()) + " files compared across two runs, " +
                                            std::to_string(differing) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
    fs::path work = fs::temp_directory_path() / "emgllm_acceptance";
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--work" && i + 1 < argc) {
            work = argv[++i];
        } else if (a == "--only" && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            for (std::string n; std::getline(ss, n, ',');) {
                only.insert(std::stoi(n));
            }
        } else {
            std::cerr << "usage: acceptance [--work DIR] [--only 1,2,...]\n";
            return 2;
        }
    }
    // Only the directories this program owns are cleared.
    fs::remove_all(work / "main");
    fs::remove_all(work / "repro");
    fs::create_directories(work);

    MainRun run{work, main_config(work)};
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gradient suite", gradient_suite},
        {"shape contract", shape_contract},
        {"feature contract", feature_contract},
        {"oracle equivalences", oracle_equivalences},
        {"end-to-end learnability", [&] { return end_to_end(run); }},
        {"ablation harness", [&] { return ablation(run); }},
        {"data-efficiency sweep", [&] { return sweep(run); }},
        {"person-id pilot", [&] { return person_id(run); }},
        {"parameter calibration", calibration},
        {"reproducibility", [&] { return reproducibility(work / "repro"); }},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && !only.count(id)) {
            continue;
        }
        const auto t0 = Clock::now();
        Outcome r;
        try {
            r = criteria[i].second();
        } catch (const std::exception& e) {
            r = {false, std::string("error: ") + e.what()};
        }
        failed += r.pass ? 0 : 1;
        std::cout << (r.pass ? "PASS" : "FAIL") << " " << std::setw(2) << id << " " << criteria[i].first << ": " << r.detail
                  << " [" << fmt(seconds_since(t0), 4) << " s]" << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
