// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "emgllm/objective/objective.hpp"

#include <cmath>
#include <limits>

#include "emgllm/error.hpp"

namespace emgllm::objective {

using namespace numerics;

std::string to_string(LossKind k) { return k == LossKind::CeTemperature ? "ce_temperature" : "ctc"; }

std::string to_string(CtcLengthPolicy p) { return p == CtcLengthPolicy::Strict ? "strict" : "feasible"; }

LossKind parse_loss_kind(const std::string& s) {
    if (s == "ce_temperature") {
        return LossKind::CeTemperature;
    }
    if (s == "ctc") {
        return LossKind::Ctc;
    }
    throw ParameterError("unknown loss kind '" + s + "' (expected ce_temperature|ctc)");
}

CtcLengthPolicy parse_ctc_length_policy(const std::string& s) {
    if (s == "strict") {
        return CtcLengthPolicy::Strict;
    }
    if (s == "feasible") {
        return CtcLengthPolicy::Feasible;
    }
    throw ParameterError("unknown ctc_length_policy '" + s + "' (expected strict|feasible)");
}

void LossSpec::validate() const {
    if (!(tau > 0)) {
        throw ParameterError("loss tau must be > 0, got " + std::to_string(tau));
    }
    if (dilation_factor < 1) {
        throw ParameterError("loss dilation_factor must be >= 1, got " +
                             std::to_string(dilation_factor));
    }
}

template <typename T>
Var<T> ce_temperature_loss(Var<T> logits, std::span<const int> targets, T tau) {
    const Tensor<T>& z = logits.value();
    if (static_cast<int>(targets.size()) != z.rows()) {
        throw ContractError("ce_temperature_loss: " + std::to_string(z.rows()) + " logit rows for " +
                            std::to_string(targets.size()) + " targets");
    }
    const int v = z.cols();
    for (int y : targets) {
        if (y < 0 || y >= v) {
            throw ContractError("ce_temperature_loss: target id " + std::to_string(y) +
                                " out of range [0, " + std::to_string(v) + ")");
        }
    }
    Tensor<T> logp = kernels::log_softmax_rows(z, tau);
    T loss = 0;
    for (int r = 0; r < z.rows(); ++r) {
        loss -= logp.at(r, targets[static_cast<std::size_t>(r)]);
    }
    std::vector<int> ys(targets.begin(), targets.end());
    return logits.tape->record(
        Tensor<T>::scalar(loss), {logits},
        [logits, ys = std::move(ys), logp = std::move(logp), tau](Tape<T>& t, const Tensor<T>& g) {
            Tensor<T>& gz = t.grad(logits.id);
            const T s = g[0] / tau;
            for (int r = 0; r < logp.rows(); ++r) {
                auto lp = logp.row(r);
                auto out = gz.row(r);
                for (int c = 0; c < logp.cols(); ++c) {
                    out[c] += s * std::exp(lp[c]);
                }
                out[ys[static_cast<std::size_t>(r)]] -= s;
            }
        });
}

template <typename T>
ConvLayer add_dilation_conv(ParameterSet<T>& ps, const std::string& name, int dim, bool identity,
                            Rng& rng) {
    ConvLayer c = add_conv(ps, name, 3, dim, dim, 1, rng);
    if (identity) {
        Tensor<T>& k = ps[c.kernel].value;
        k.fill(T(0));
        for (int i = 0; i < dim; ++i) {
            k[static_cast<std::size_t>(2 * dim * dim + i * dim + i)] = T(1);
        }
        ps[c.bias].value.fill(T(0));
    }
    return c;
}

template <typename T>
Var<T> dilate_embeddings(Tape<T>& tape, ParameterSet<T>& ps, const ConvLayer& conv,
                         Var<T> embeddings, int factor) {
    if (factor < 1) {
        throw ParameterError("dilation factor must be >= 1, got " + std::to_string(factor));
    }
    return apply(tape, ps, conv, interpolate_rows(embeddings, factor));
}

int ctc_min_length(std::span<const int> target, CtcLengthPolicy policy) {
    const int n = static_cast<int>(target.size());
    if (policy == CtcLengthPolicy::Strict) {
        return 2 * n + 1;
    }
    int repeats = 0;
    for (int i = 1; i < n; ++i) {
        repeats += target[static_cast<std::size_t>(i)] == target[static_cast<std::size_t>(i - 1)];
    }
    return n + repeats;
}

namespace {

double log_add(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) {
        return b;
    }
    if (b == -std::numeric_limits<double>::infinity()) {
        return a;
    }
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace

template <typename T>
Var<T> ctc_loss(Var<T> frame_logits, std::span<const int> target, int blank,
                CtcLengthPolicy policy) {
    const Tensor<T>& z = frame_logits.value();
    const int frames = z.rows();
    const int classes = z.cols();
    if (blank < 0 || blank >= classes) {
        throw ContractError("ctc_loss: blank id " + std::to_string(blank) + " outside [0, " +
                            std::to_string(classes) + ")");
    }
    for (int y : target) {
        if (y < 0 || y >= classes || y == blank) {
            throw ContractError("ctc_loss: invalid target id " + std::to_string(y));
        }
    }
    const int need = ctc_min_length(target, policy);
    if (frames < need) {
        throw ContractError("CTC length constraint: " + std::to_string(frames) + " frames for " +
                            std::to_string(target.size()) + " target tokens, need at least " +
                            std::to_string(need) + " (" + to_string(policy) + ")");
    }
    const double ninf = -std::numeric_limits<double>::infinity();
    // Log-probabilities in double regardless of T.
    std::vector<double> lp(static_cast<std::size_t>(frames) * classes);
    for (int t = 0; t < frames; ++t) {
        auto row = z.row(t);
        double mx = ninf;
        for (T v : row) {
            mx = std::max(mx, static_cast<double>(v));
        }
        double total = 0;
        for (T v : row) {
            total += std::exp(static_cast<double>(v) - mx);
        }
        const double lse = mx + std::log(total);
        for (int c = 0; c < classes; ++c) {
            lp[static_cast<std::size_t>(t) * classes + c] = static_cast<double>(row[c]) - lse;
        }
    }
    const int s_len = 2 * static_cast<int>(target.size()) + 1;
    std::vector<int> ext(static_cast<std::size_t>(s_len), blank);
    for (std::size_t i = 0; i < target.size(); ++i) {
        ext[2 * i + 1] = target[i];
    }
    auto logy = [&](int t, int s) {
        return lp[static_cast<std::size_t>(t) * classes + ext[static_cast<std::size_t>(s)]];
    };
    auto skip_ok = [&](int s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };
    // alpha includes the emission at t, beta excludes it.
    std::vector<double> alpha(static_cast<std::size_t>(frames) * s_len, ninf);
    std::vector<double> beta(static_cast<std::size_t>(frames) * s_len, ninf);
    auto A = [&](int t, int s) -> double& { return alpha[static_cast<std::size_t>(t) * s_len + s]; };
    auto B = [&](int t, int s) -> double& { return beta[static_cast<std::size_t>(t) * s_len + s]; };
    A(0, 0) = logy(0, 0);
    if (s_len > 1) {
        A(0, 1) = logy(0, 1);
    }
    for (int t = 1; t < frames; ++t) {
        for (int s = 0; s < s_len; ++s) {
            double a = A(t - 1, s);
            if (s >= 1) {
                a = log_add(a, A(t - 1, s - 1));
            }
            if (skip_ok(s)) {
                a = log_add(a, A(t - 1, s - 2));
            }
            A(t, s) = a == ninf ? ninf : a + logy(t, s);
        }
    }
    double logp = A(frames - 1, s_len - 1);
    if (s_len > 1) {
        logp = log_add(logp, A(frames - 1, s_len - 2));
    }
    if (logp == ninf) {
        throw NumericError("ctc_loss: target has zero probability under the given logits");
    }
    B(frames - 1, s_len - 1) = 0;
    if (s_len > 1) {
        B(frames - 1, s_len - 2) = 0;
    }
    for (int t = frames - 2; t >= 0; --t) {
        for (int s = 0; s < s_len; ++s) {
            double b = B(t + 1, s) + logy(t + 1, s);
            if (s + 1 < s_len) {
                b = log_add(b, B(t + 1, s + 1) + logy(t + 1, s + 1));
            }
            if (s + 2 < s_len && skip_ok(s + 2)) {
                b = log_add(b, B(t + 1, s + 2) + logy(t + 1, s + 2));
            }
            B(t, s) = b;
        }
    }
    // Occupancy per (frame, class): sum over extended states of alpha * beta / p.
    Tensor<T> dz({frames, classes});
    for (int t = 0; t < frames; ++t) {
        std::vector<double> occ(static_cast<std::size_t>(classes), ninf);
        for (int s = 0; s < s_len; ++s) {
            const double v = A(t, s) + B(t, s);
            auto& o = occ[static_cast<std::size_t>(ext[static_cast<std::size_t>(s)])];
            o = log_add(o, v);
        }
        for (int c = 0; c < classes; ++c) {
            const double p = std::exp(lp[static_cast<std::size_t>(t) * classes + c]);
            const double gamma = occ[static_cast<std::size_t>(c)] == ninf
                                     ? 0.0
                                     : std::exp(occ[static_cast<std::size_t>(c)] - logp);
            dz.at(t, c) = static_cast<T>(p - gamma);
        }
    }
    return frame_logits.tape->record(
        Tensor<T>::scalar(static_cast<T>(-logp)), {frame_logits},
        [frame_logits, dz = std::move(dz)](Tape<T>& t, const Tensor<T>& g) {
            Tensor<T>& out = t.grad(frame_logits.id);
            for (std::size_t i = 0; i < dz.size(); ++i) {
                out[i] += g[0] * dz[i];
            }
        });
}

std::vector<int> ctc_greedy_decode(const Tensor<float>& frame_logits, int blank) {
    std::vector<int> out;
    int prev = -1;
    for (int t = 0; t < frame_logits.rows(); ++t) {
        auto row = frame_logits.row(t);
        int best = 0;
        for (int c = 1; c < static_cast<int>(row.size()); ++c) {
            if (row[c] > row[best]) {
                best = c;
            }
        }
        if (best != prev && best != blank) {
            out.push_back(best);
        }
        prev = best;
    }
    return out;
}

#define EMGLLM_INSTANTIATE_OBJECTIVE(T)                                                           \
    template Var<T> ce_temperature_loss<T>(Var<T>, std::span<const int>, T);                      \
    template ConvLayer add_dilation_conv<T>(ParameterSet<T>&, const std::string&, int, bool,      \
                                            Rng&);                                                \
    template Var<T> dilate_embeddings<T>(Tape<T>&, ParameterSet<T>&, const ConvLayer&, Var<T>,    \
                                         int);                                                    \
    template Var<T> ctc_loss<T>(Var<T>, std::span<const int>, int, CtcLengthPolicy);

EMGLLM_INSTANTIATE_OBJECTIVE(float)
EMGLLM_INSTANTIATE_OBJECTIVE(double)

}  // namespace emgllm::objective
