// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <functional>

#include "../support/gradcheck_support.hpp"
#include "doctest.h"
#include "emgllm/objective/objective.hpp"

using namespace emgllm;
using namespace emgllm::objective;
using numerics::Rng;
using numerics::Tape;
using numerics::Tensor;

namespace {

double ce(const Tensor<double>& z, const std::vector<int>& y, double tau) {
    Tape<double> tape(false);
    return ce_temperature_loss(tape.constant(z), y, tau).value()[0];
}

double ctc(const Tensor<double>& z, const std::vector<int>& y, int blank,
           CtcLengthPolicy p = CtcLengthPolicy::Feasible) {
    Tape<double> tape(false);
    return ctc_loss(tape.constant(z), y, blank, p).value()[0];
}

// Sum over every frame labelling whose collapse equals the target.
double brute_force_ctc(const Tensor<double>& z, const std::vector<int>& target, int blank) {
    const int frames = z.rows();
    const int classes = z.cols();
    std::vector<std::vector<double>> prob(static_cast<std::size_t>(frames));
    for (int t = 0; t < frames; ++t) {
        double total = 0;
        for (int c = 0; c < classes; ++c) {
            total += std::exp(z.at(t, c));
        }
        for (int c = 0; c < classes; ++c) {
            prob[t].push_back(std::exp(z.at(t, c)) / total);
        }
    }
    double sum = 0;
    std::vector<int> path(static_cast<std::size_t>(frames), 0);
    std::function<void(int, double)> walk = [&](int t, double p) {
        if (t == frames) {
            std::vector<int> out;
            int prev = -1;
            for (int c : path) {
                if (c != prev && c != blank) {
                    out.push_back(c);
                }
                prev = c;
            }
            if (out == target) {
                sum += p;
            }
            return;
        }
        for (int c = 0; c < classes; ++c) {
            path[t] = c;
            walk(t + 1, p * prob[t][c]);
        }
    };
    walk(0, 1.0);
    return -std::log(sum);
}

// All sequences of length <= max_len over [0, alphabet).
std::vector<std::vector<int>> all_targets(int alphabet, int max_len) {
    std::vector<std::vector<int>> out = {{}};
    std::vector<std::vector<int>> frontier = {{}};
    for (int len = 1; len <= max_len; ++len) {
        std::vector<std::vector<int>> next;
        for (const auto& s : frontier) {
            for (int c = 0; c < alphabet; ++c) {
                auto e = s;
                e.push_back(c);
                next.push_back(e);
            }
        }
        out.insert(out.end(), next.begin(), next.end());
        frontier = next;
    }
    return out;
}

}  // namespace

TEST_CASE("temperature cross-entropy fixed values") {
    // Uniform logits: T_s * ln|V| regardless of tau.
    for (double tau : {0.5, 0.8, 1.0, 2.0}) {
        CHECK(ce(Tensor<double>({5, 71}, 0.3), {4, 5, 6, 7, 1}, tau) ==
              doctest::Approx(21.3133993852065771).epsilon(1e-12));
    }
    CHECK(ce(Tensor<double>({1, 2}, std::vector<double>{1, 0}), {0}, 0.8) ==
          doctest::Approx(0.2519290813453729).epsilon(1e-12));
    Tensor<double> peaked({1, 5});
    peaked.at(0, 2) = 30;
    CHECK(ce(peaked, {2}, 1.0) < 1e-9);
    CHECK_THROWS_AS(ce(peaked, {5}, 1.0), ContractError);
    CHECK_THROWS_AS(ce(Tensor<double>({2, 5}), {1}, 1.0), ContractError);
}

TEST_CASE("temperature cross-entropy properties") {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const auto z = numerics::uniform_tensor<double>({4, 7}, 3.0, rng);
        const std::vector<int> y = {0, 6, 3, 3};
        // tau = 1 against a reference log-sum-exp.
        double ref = 0;
        for (int r = 0; r < 4; ++r) {
            double total = 0;
            for (int c = 0; c < 7; ++c) {
                total += std::exp(z.at(r, c));
            }
            ref += std::log(total) - z.at(r, y[r]);
        }
        CHECK(ce(z, y, 1.0) == doctest::Approx(ref).epsilon(1e-9));
        CHECK(ce(z, y, 0.8) >= 0);
        auto shifted = z;
        for (int r = 0; r < 4; ++r) {
            for (int c = 0; c < 7; ++c) {
                shifted.at(r, c) += 10.0 * r - 3;
            }
        }
        CHECK(std::abs(ce(shifted, y, 0.8) - ce(z, y, 0.8)) < 1e-6);
        auto res = testing::check_gradients(
            [&](Tape<double>&, const std::vector<numerics::Var<double>>& v) {
                return ce_temperature_loss(v[0], y, 0.8);
            },
            {z}, 100 + trial, 1e-4);
        CHECK(res.ok);
    }
}

TEST_CASE("dilation") {
    Rng rng(2);
    numerics::ParameterSet<double> ps;
    auto conv = add_dilation_conv(ps, "dilate", 6, true, rng);
    const auto e = numerics::uniform_tensor<double>({5, 6}, 1.0, rng);
    Tape<double> tape(false);
    CHECK(dilate_embeddings(tape, ps, conv, tape.constant(e), 1).value() == e);
    auto d = dilate_embeddings(tape, ps, conv, tape.constant(e), 2);
    CHECK(d.rows() == 10);
    // Identity conv leaves the interpolation visible.
    auto interp = numerics::interpolate_rows(tape.constant(e), 2).value();
    CHECK(d.value() == interp);
    auto random_conv = add_dilation_conv(ps, "dilate2", 6, false, rng);
    CHECK(dilate_embeddings(tape, ps, random_conv, tape.constant(e), 3).rows() == 15);
    CHECK_THROWS_AS(dilate_embeddings(tape, ps, conv, tape.constant(e), 0), ParameterError);
}

TEST_CASE("ctc fixed examples") {
    // One frame, one symbol: a single path.
    Tensor<double> one({1, 3}, std::vector<double>{std::log(0.9), std::log(0.05), std::log(0.05)});
    CHECK(ctc(one, {0}, 2) == doctest::Approx(-std::log(0.9)).epsilon(1e-12));
    CHECK_THROWS_WITH(ctc(one, {0}, 2, CtcLengthPolicy::Strict),
                      doctest::Contains("CTC length constraint"));
    // Two frames, target "a": paths aa, a-, -a.
    Tensor<double> two({2, 3}, std::vector<double>{std::log(0.6), std::log(0.1), std::log(0.3),
                                                   std::log(0.2), std::log(0.5), std::log(0.3)});
    CHECK(ctc(two, {0}, 2) == doctest::Approx(1.0216512475319814).epsilon(1e-12));
    // T' = 2|target| is one short under the strict rule.
    CHECK_THROWS_WITH(ctc(Tensor<double>({4, 3}), {0, 1}, 2, CtcLengthPolicy::Strict),
                      doctest::Contains("CTC length constraint"));
    CHECK_NOTHROW(ctc(Tensor<double>({5, 3}), {0, 1}, 2, CtcLengthPolicy::Strict));
    // Repeats need a separating blank even under the feasible rule.
    CHECK_THROWS_WITH(ctc(Tensor<double>({2, 3}), {0, 0}, 2),
                      doctest::Contains("CTC length constraint"));
    CHECK(ctc_min_length(std::vector<int>{0, 0, 1}, CtcLengthPolicy::Feasible) == 4);
    CHECK(ctc_min_length(std::vector<int>{0, 0, 1}, CtcLengthPolicy::Strict) == 7);
}

TEST_CASE("ctc equals exhaustive path enumeration") {
    Rng rng(3);
    int checked = 0;
    for (int alphabet = 1; alphabet <= 3; ++alphabet) {
        const int blank = alphabet;
        for (int frames = 1; frames <= 6; ++frames) {
            for (const auto& target : all_targets(alphabet, 2)) {
                if (frames < ctc_min_length(target, CtcLengthPolicy::Feasible)) {
                    continue;
                }
                const auto z = numerics::uniform_tensor<double>({frames, alphabet + 1}, 2.0, rng);
                CHECK(ctc(z, target, blank) == doctest::Approx(brute_force_ctc(z, target, blank)).epsilon(1e-10));
                ++checked;
            }
        }
    }
    CHECK(checked > 100);
}

TEST_CASE("ctc invariances and gradients") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const auto z = numerics::uniform_tensor<double>({7, 4}, 2.0, rng);
        const std::vector<int> target = {1, 0, 1};
        // Relabel symbols 0 <-> 1 and blank 3 <-> 2 consistently.
        const std::vector<int> perm = {1, 0, 3, 2};
        Tensor<double> zp({7, 4});
        for (int t = 0; t < 7; ++t) {
            for (int c = 0; c < 4; ++c) {
                zp.at(t, perm[c]) = z.at(t, c);
            }
        }
        std::vector<int> tp;
        for (int y : target) {
            tp.push_back(perm[y]);
        }
        CHECK(ctc(zp, tp, perm[3], CtcLengthPolicy::Strict) ==
              doctest::Approx(ctc(z, target, 3, CtcLengthPolicy::Strict)).epsilon(1e-12));
        auto shifted = z;
        for (int t = 0; t < 7; ++t) {
            for (int c = 0; c < 4; ++c) {
                shifted.at(t, c) += 5.0 * t;
            }
        }
        CHECK(std::abs(ctc(shifted, target, 3) - ctc(z, target, 3)) < 1e-6);
        auto res = testing::check_gradients(
            [&](Tape<double>&, const std::vector<numerics::Var<double>>& v) {
                return ctc_loss(v[0], target, 3);
            },
            {z}, 200 + trial, 1e-4);
        CHECK(res.ok);
    }
}

TEST_CASE("ctc greedy decode collapses and drops blanks") {
    // argmax path: a a - b b - b
    const std::vector<int> path = {0, 0, 2, 1, 1, 2, 1};
    Tensor<float> z({7, 3});
    for (int t = 0; t < 7; ++t) {
        z.at(t, path[t]) = 5;
    }
    CHECK(ctc_greedy_decode(z, 2) == std::vector<int>{0, 1, 1});
}

TEST_CASE("loss spec parsing") {
    CHECK(parse_loss_kind("ctc") == LossKind::Ctc);
    CHECK_THROWS_AS(parse_loss_kind("mse"), ParameterError);
    LossSpec s;
    s.tau = 0;
    CHECK_THROWS_AS(s.validate(), ParameterError);
}
