// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "emgllm/decode/decode.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>

#include "emgllm/corpus/corpus.hpp"
#include "emgllm/error.hpp"
#include "emgllm/numerics/layers.hpp"
#include "emgllm/objective/objective.hpp"
#include "json.hpp"

namespace emgllm::decode {

using namespace numerics;

namespace {

bool allowed(int token, bool constrained) {
    return !constrained || !(token == lm::kBos || token == lm::kPad || token == lm::kUnk);
}

std::vector<double> log_probs(const Tensor<float>& logits_row) {
    const Tensor<float> lp = kernels::log_softmax_rows(logits_row, 1.0f);
    return std::vector<double>(lp.storage().begin(), lp.storage().end());
}

Tensor<float> last_row(const Tensor<float>& m) {
    Tensor<float> r({1, m.cols()});
    auto src = m.row(m.rows() - 1);
    std::copy(src.begin(), src.end(), r.data());
    return r;
}

double normalized(double log_prob, std::size_t len, double length_norm) {
    if (length_norm == 0.0) {
        return log_prob;
    }
    return log_prob / std::pow(static_cast<double>(std::max<std::size_t>(len, 1)), length_norm);
}

}  // namespace

std::vector<BeamHypothesis> beam_search(const lm::TinyLm<float>& lm, const Tensor<float>& prefix,
                                        const DecodeConfig& config) {
    if (config.beam_width < 1 || config.max_len < 1) {
        throw ParameterError("beam_search needs beam_width >= 1 and max_len >= 1");
    }
    struct Live {
        std::vector<int> tokens;
        double log_prob = 0;
        lm::TinyLm<float>::Cache cache;
        std::vector<double> next;  // log-probs of the next token
    };
    std::vector<Live> live(1);
    live[0].cache = lm.new_cache();
    live[0].next = log_probs(last_row(lm.infer(prefix, live[0].cache)));
    std::vector<BeamHypothesis> finished;
    const int vocab = lm.config().vocab_size;
    for (int step = 0; step < config.max_len && !live.empty(); ++step) {
        struct Cand {
            double log_prob;
            int beam;
            int token;
        };
        std::vector<Cand> cands;
        for (int b = 0; b < static_cast<int>(live.size()); ++b) {
            for (int c = 0; c < vocab; ++c) {
                if (allowed(c, config.constrained)) {
                    cands.push_back({live[b].log_prob + live[b].next[c], b, c});
                }
            }
        }
        // Ties go to the earlier beam, then the smaller token id.
        const auto keep = std::min<std::size_t>(cands.size(), static_cast<std::size_t>(config.beam_width));
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                          [](const Cand& a, const Cand& b) {
                              if (a.log_prob != b.log_prob) {
                                  return a.log_prob > b.log_prob;
                              }
                              if (a.beam != b.beam) {
                                  return a.beam < b.beam;
                              }
                              return a.token < b.token;
                          });
        std::vector<Live> next_live;
        for (std::size_t i = 0; i < keep; ++i) {
            const Cand& c = cands[i];
            std::vector<int> tokens = live[c.beam].tokens;
            tokens.push_back(c.token);
            if (c.token == lm::kEos) {
                BeamHypothesis h;
                h.tokens = std::move(tokens);
                h.log_prob = c.log_prob;
                h.finished = true;
                finished.push_back(std::move(h));
                continue;
            }
            Live n;
            n.tokens = std::move(tokens);
            n.log_prob = c.log_prob;
            n.cache = live[c.beam].cache;
            if (step + 1 < config.max_len) {
                const std::vector<int> id = {c.token};
                n.next = log_probs(lm.infer(lm.embedding_rows(id), n.cache));
            }
            next_live.push_back(std::move(n));
        }
        live = std::move(next_live);
        // Scores only fall as hypotheses grow, so a finished one that beats every
        // live beam cannot be overtaken when there is no length normalization.
        if (config.length_norm == 0.0 && !finished.empty() && !live.empty()) {
            double best_done = -std::numeric_limits<double>::infinity();
            for (const auto& h : finished) {
                best_done = std::max(best_done, h.log_prob);
            }
            bool open = false;
            for (const auto& l : live) {
                open = open || l.log_prob > best_done;
            }
            if (!open) {
                live.clear();
            }
        }
    }
    for (auto& l : live) {
        BeamHypothesis h;
        h.tokens = std::move(l.tokens);
        h.log_prob = l.log_prob;
        h.finished = true;
        h.forced = true;
        finished.push_back(std::move(h));
    }
    for (auto& h : finished) {
        h.score = normalized(h.log_prob, h.tokens.size(), config.length_norm);
    }
    std::stable_sort(finished.begin(), finished.end(),
                     [](const BeamHypothesis& a, const BeamHypothesis& b) { return a.score > b.score; });
    return finished;
}

std::vector<int> greedy_decode(const lm::TinyLm<float>& lm, const Tensor<float>& prefix, int max_len,
                               bool constrained) {
    auto cache = lm.new_cache();
    Tensor<float> logits = last_row(lm.infer(prefix, cache));
    std::vector<int> out;
    for (int step = 0; step < max_len; ++step) {
        int best = -1;
        for (int c = 0; c < logits.cols(); ++c) {
            if (allowed(c, constrained) && (best < 0 || logits[c] > logits[best])) {
                best = c;
            }
        }
        out.push_back(best);
        if (best == lm::kEos || step + 1 == max_len) {
            break;
        }
        const std::vector<int> id = {best};
        logits = lm.infer(lm.embedding_rows(id), cache);
    }
    return out;
}

std::vector<int> strip_eos(std::vector<int> tokens) {
    if (!tokens.empty() && tokens.back() == lm::kEos) {
        tokens.pop_back();
    }
    return tokens;
}

EditCounts edit_counts(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
    const std::size_t n = ref.size();
    const std::size_t m = hyp.size();
    // Cell holds (total, subs, dels, ins); ties prefer substitutions, then deletions.
    struct Cell {
        int cost, s, d, i;
    };
    std::vector<Cell> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) {
        prev[j] = {static_cast<int>(j), 0, 0, static_cast<int>(j)};
    }
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = {static_cast<int>(i), 0, static_cast<int>(i), 0};
        for (std::size_t j = 1; j <= m; ++j) {
            const bool same = ref[i - 1] == hyp[j - 1];
            Cell sub = prev[j - 1];
            sub.cost += same ? 0 : 1;
            sub.s += same ? 0 : 1;
            Cell del = prev[j];
            del.cost += 1;
            del.d += 1;
            Cell ins = cur[j - 1];
            ins.cost += 1;
            ins.i += 1;
            Cell best = sub;
            if (del.cost < best.cost) {
                best = del;
            }
            if (ins.cost < best.cost) {
                best = ins;
            }
            cur[j] = best;
        }
        std::swap(prev, cur);
    }
    return EditCounts{prev[m].s, prev[m].d, prev[m].i};
}

double wer(const std::vector<std::string>& reference, const std::vector<std::string>& hypothesis) {
    if (reference.empty()) {
        throw ContractError("wer: empty reference");
    }
    return static_cast<double>(edit_counts(reference, hypothesis).errors()) /
           static_cast<double>(reference.size());
}

double population_std(const std::vector<double>& values) {
    if (values.empty()) {
        return 0;
    }
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    double ss = 0;
    for (double v : values) {
        ss += (v - mean) * (v - mean);
    }
    return std::sqrt(ss / static_cast<double>(values.size()));
}

SplitReport evaluate_split(const std::vector<std::vector<EvalItem>>& folds,
                           const std::vector<Transcriber>& transcribers) {
    if (folds.empty() || folds.size() != transcribers.size()) {
        throw ContractError("evaluate_split: need one transcriber per fold");
    }
    SplitReport report;
    std::vector<double> wers;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        if (folds[f].empty()) {
            throw ContractError("evaluate_split: fold " + std::to_string(f) + " is empty");
        }
        FoldMetrics fm;
        fm.fold = static_cast<int>(f);
        double utt_sum = 0;
        for (const auto& item : folds[f]) {
            const Transcription t = transcribers[f](item.utterance_id);
            UtteranceRecord r;
            r.fold = fm.fold;
            r.utterance_id = item.utterance_id;
            r.reference = corpus::normalize_transcript(item.reference);
            r.hypothesis = corpus::normalize_transcript(t.text);
            r.log_prob = t.log_prob;
            const auto ref = corpus::split_words(r.reference);
            const auto hyp = corpus::split_words(r.hypothesis);
            r.n_words = static_cast<int>(ref.size());
            r.n_errors = edit_counts(ref, hyp).errors();
            r.wer = wer(ref, hyp);
            fm.n_words += r.n_words;
            fm.n_errors += r.n_errors;
            utt_sum += r.wer;
            report.records.push_back(std::move(r));
        }
        fm.wer = static_cast<double>(fm.n_errors) / static_cast<double>(fm.n_words);
        fm.mean_utterance_wer = utt_sum / static_cast<double>(folds[f].size());
        wers.push_back(fm.wer);
        report.folds.push_back(fm);
    }
    report.wer_mean = std::accumulate(wers.begin(), wers.end(), 0.0) / static_cast<double>(wers.size());
    report.wer_std = population_std(wers);
    return report;
}

void write_predictions_jsonl(const SplitReport& report, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw IoError("cannot write " + path.string());
    }
    for (const auto& r : report.records) {
        nlohmann::ordered_json j;
        j["utterance_id"] = r.utterance_id;
        j["reference"] = r.reference;
        j["hypothesis"] = r.hypothesis;
        j["log_prob"] = r.log_prob;
        j["wer"] = r.wer;
        os << j.dump() << '\n';
    }
}

void write_metrics_csv(const SplitReport& report, const std::string& split,
                       const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw IoError("cannot write " + path.string());
    }
    os << "fold,split,wer,n_words,n_errors\n" << std::setprecision(6) << std::fixed;
    for (const auto& f : report.folds) {
        os << f.fold << ',' << split << ',' << f.wer << ',' << f.n_words << ',' << f.n_errors << '\n';
    }
}

template <typename T>
static Tensor<T> pool_impl(const Tensor<T>& z) {
    if (z.rows() < 1 || z.cols() < 1) {
        throw ContractError("pid_pool needs at least one row");
    }
    Tensor<T> out({1, z.cols()});
    for (int c = 0; c < z.cols(); ++c) {
        double s = 0;
        for (int r = 0; r < z.rows(); ++r) {
            s += static_cast<double>(z.at(r, c));
        }
        out[static_cast<std::size_t>(c)] = static_cast<T>(s / z.rows());
    }
    return out;
}

Tensor<float> pid_pool(const Tensor<float>& logits) { return pool_impl(logits); }
Tensor<double> pid_pool(const Tensor<double>& logits) { return pool_impl(logits); }

PidResult train_pid_head(const std::vector<PidSample>& train, const std::vector<PidSample>& test,
                         int classes, const PidHeadConfig& config) {
    if (classes < 2) {
        throw ContractError("person identification needs at least 2 speakers");
    }
    if (train.empty()) {
        throw ContractError("train_pid_head: empty training set");
    }
    const int dim = train.front().feature.cols();
    // Standardize features with training statistics.
    std::vector<double> mean(static_cast<std::size_t>(dim), 0.0), sd(static_cast<std::size_t>(dim), 0.0);
    for (const auto& s : train) {
        for (int c = 0; c < dim; ++c) {
            mean[c] += s.feature[c];
        }
    }
    for (auto& m : mean) {
        m /= static_cast<double>(train.size());
    }
    for (const auto& s : train) {
        for (int c = 0; c < dim; ++c) {
            sd[c] += (s.feature[c] - mean[c]) * (s.feature[c] - mean[c]);
        }
    }
    for (auto& v : sd) {
        v = std::sqrt(v / static_cast<double>(train.size())) + 1e-6;
    }
    auto standardize = [&](const std::vector<PidSample>& in) {
        Tensor<float> x({static_cast<int>(in.size()), dim});
        std::vector<int> y;
        for (std::size_t i = 0; i < in.size(); ++i) {
            if (in[i].feature.cols() != dim) {
                throw ContractError("train_pid_head: inconsistent feature width");
            }
            if (in[i].label < 0 || in[i].label >= classes) {
                throw ContractError("train_pid_head: label out of range");
            }
            for (int c = 0; c < dim; ++c) {
                x.at(static_cast<int>(i), c) = static_cast<float>((in[i].feature[c] - mean[c]) / sd[c]);
            }
            y.push_back(in[i].label);
        }
        return std::make_pair(x, y);
    };
    const auto [xtr, ytr] = standardize(train);
    const auto [xte, yte] = standardize(test);
    Rng rng(derive_seed(config.seed, "pid_head"));
    ParameterSet<float> ps;
    const auto l1 = add_linear(ps, "pid.fc1", dim, config.hidden, true, rng);
    const auto l2 = add_linear(ps, "pid.fc2", config.hidden, classes, true, rng);
    auto logits = [&](Tape<float>& tape, const Tensor<float>& x) {
        return apply(tape, ps, l2, gelu(apply(tape, ps, l1, tape.constant(x))));
    };
    AdamWConfig opt;
    opt.lr = config.lr;
    opt.weight_decay = config.weight_decay;
    std::vector<int> order(ytr.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::vector<int> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                  order.begin() + static_cast<std::ptrdiff_t>(end));
            std::vector<int> labels;
            for (int r : rows) {
                labels.push_back(ytr[static_cast<std::size_t>(r)]);
            }
            Tape<float> tape;
            ps.zero_grad();
            auto z = select_rows(logits(tape, xtr), rows);
            auto loss = scale(objective::ce_temperature_loss(z, labels, 1.0f), 1.0f / static_cast<float>(rows.size()));
            tape.backward(loss);
            adamw_step(ps, opt);
        }
    }
    auto accuracy = [&](const Tensor<float>& x, const std::vector<int>& y) {
        if (y.empty()) {
            return 0.0;
        }
        Tape<float> tape(false);
        const Tensor<float> z = logits(tape, x).value();
        int hit = 0;
        for (int r = 0; r < z.rows(); ++r) {
            auto row = z.row(r);
            hit += static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) == y[static_cast<std::size_t>(r)];
        }
        return static_cast<double>(hit) / static_cast<double>(y.size());
    };
    return PidResult{accuracy(xtr, ytr), accuracy(xte, yte)};
}

}  // namespace emgllm::decode
