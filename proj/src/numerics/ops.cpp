// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "emgllm/numerics/ops.hpp"

#include <cmath>

namespace emgllm::numerics {

namespace {

template <typename T>
void require_same_tape(Var<T> a, Var<T> b, const char* op) {
    if (a.tape != b.tape) {
        throw ContractError(std::string(op) + ": operands recorded on different tapes");
    }
}

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op) {
    if (t.rank() != 2) {
        throw ContractError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
    }
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
    T* d = dst.data();
    const T* s = src.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
        d[i] += s[i];
    }
}

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    require_same_tape(a, b, "add");
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    Tape<T>& tape = *a.tape;
    if (av.shape() == bv.shape()) {
        Tensor<T> out = av;
        add_into(out, bv);
        return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
            if (t.requires_grad(a.id)) {
                add_into(t.grad(a.id), g);
            }
            if (t.requires_grad(b.id)) {
                add_into(t.grad(b.id), g);
            }
        });
    }
    if (static_cast<int>(bv.size()) == av.cols() && av.rank() == 2 &&
        (bv.rank() == 1 || bv.rows() == 1)) {
        Tensor<T> out = av;
        for (int r = 0; r < out.rows(); ++r) {
            auto row = out.row(r);
            for (int c = 0; c < out.cols(); ++c) {
                row[c] += bv[c];
            }
        }
        return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
            if (t.requires_grad(a.id)) {
                add_into(t.grad(a.id), g);
            }
            if (t.requires_grad(b.id)) {
                Tensor<T>& gb = t.grad(b.id);
                for (int r = 0; r < g.rows(); ++r) {
                    auto row = g.row(r);
                    for (int c = 0; c < g.cols(); ++c) {
                        gb[c] += row[c];
                    }
                }
            }
        });
    }
    throw ContractError("add: shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()) +
                        " are not compatible");
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    require_same_tape(a, b, "mul");
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (av.shape() != bv.shape()) {
        throw ContractError("mul: shapes " + shape_str(av.shape()) + " and " +
                            shape_str(bv.shape()) + " differ");
    }
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] * bv[i];
    }
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& x = t.value(a.id);
        const Tensor<T>& y = t.value(b.id);
        if (t.requires_grad(a.id)) {
            Tensor<T>& ga = t.grad(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i] * y[i];
            }
        }
        if (t.requires_grad(b.id)) {
            Tensor<T>& gb = t.grad(b.id);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gb[i] += g[i] * x[i];
            }
        }
    });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
    Tensor<T> out = a.value();
    for (auto& v : out.values()) {
        v *= factor;
    }
    return a.tape->record(std::move(out), {a}, [a, factor](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& ga = t.grad(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * factor;
        }
    });
}

template <typename T>
Var<T> sum(Var<T> a) {
    T total = 0;
    for (T v : a.value().values()) {
        total += v;
    }
    return a.tape->record(Tensor<T>::scalar(total), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& ga = t.grad(a.id);
        for (auto& v : ga.values()) {
            v += g[0];
        }
    });
}

template <typename T>
Var<T> sum_squares(Var<T> a) {
    T total = 0;
    for (T v : a.value().values()) {
        total += v * v;
    }
    return a.tape->record(Tensor<T>::scalar(total), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& x = t.value(a.id);
        Tensor<T>& ga = t.grad(a.id);
        for (std::size_t i = 0; i < x.size(); ++i) {
            ga[i] += T(2) * x[i] * g[0];
        }
    });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    require_same_tape(a, b, "matmul");
    Tensor<T> out = kernels::matmul(a.value(), b.value());
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& x = t.value(a.id);
        const Tensor<T>& y = t.value(b.id);
        const int m = x.rows();
        const int k = x.cols();
        const int n = y.cols();
        if (t.requires_grad(a.id)) {
            kernels::gemm(g.data(), y.data(), t.grad(a.id).data(), m, n, k, false, true, true);
        }
        if (t.requires_grad(b.id)) {
            kernels::gemm(x.data(), g.data(), t.grad(b.id).data(), k, m, n, true, false, true);
        }
    });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) {
    require_same_tape(x, w, "linear");
    const bool has_bias = bias.valid();
    Tensor<T> out = kernels::linear(x.value(), w.value(), has_bias ? &bias.value() : nullptr);
    auto backward = [x, w, bias, has_bias](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& xv = t.value(x.id);
        const Tensor<T>& wv = t.value(w.id);
        const int m = xv.rows();
        const int k = xv.cols();
        const int n = wv.cols();
        if (t.requires_grad(x.id)) {
            kernels::gemm(g.data(), wv.data(), t.grad(x.id).data(), m, n, k, false, true, true);
        }
        if (t.requires_grad(w.id)) {
            kernels::gemm(xv.data(), g.data(), t.grad(w.id).data(), k, m, n, true, false, true);
        }
        if (has_bias && t.requires_grad(bias.id)) {
            Tensor<T>& gb = t.grad(bias.id);
            for (int r = 0; r < g.rows(); ++r) {
                auto row = g.row(r);
                for (int c = 0; c < n; ++c) {
                    gb[c] += row[c];
                }
            }
        }
    };
    if (has_bias) {
        return x.tape->record(std::move(out), {x, w, bias}, backward);
    }
    return x.tape->record(std::move(out), {x, w}, backward);
}

template <typename T>
Var<T> conv1d(Var<T> x, Var<T> kernel, Var<T> bias, int stride, Padding padding) {
    require_same_tape(x, kernel, "conv1d");
    const Tensor<T>& xv = x.value();
    const Tensor<T>& kv = kernel.value();
    require_matrix(xv, "conv1d");
    if (kv.rank() != 3) {
        throw ContractError("conv1d: kernel must be [K x Cin x Cout], got " + shape_str(kv.shape()));
    }
    const int len = xv.rows();
    const int cin = xv.cols();
    const int k = kv.dim(0);
    const int cout = kv.dim(2);
    if (kv.dim(1) != cin) {
        throw ContractError("conv1d: input has " + std::to_string(cin) + " channels but kernel " +
                            shape_str(kv.shape()) + " expects " + std::to_string(kv.dim(1)));
    }
    const bool has_bias = bias.valid();
    if (has_bias && static_cast<int>(bias.value().size()) != cout) {
        throw ContractError("conv1d: bias length " + std::to_string(bias.value().size()) +
                            " vs " + std::to_string(cout) + " output channels");
    }
    const int out_len = conv1d_output_length(len, k, stride, padding);
    if (out_len < 1) {
        throw ContractError("conv1d: input length " + std::to_string(len) +
                            " shorter than kernel " + std::to_string(k));
    }
    const int pad = conv1d_left_pad(len, k, stride, padding);
    const int width = k * cin;

    // im2col: row t holds padded samples [t*stride, t*stride + K).
    Tensor<T> cols({out_len, width});
    for (int t = 0; t < out_len; ++t) {
        T* dst = cols.data() + static_cast<std::size_t>(t) * width;
        for (int j = 0; j < k; ++j) {
            const int src = t * stride + j - pad;
            if (src >= 0 && src < len) {
                const T* s = xv.data() + static_cast<std::size_t>(src) * cin;
                std::copy(s, s + cin, dst + j * cin);
            }
        }
    }
    Tensor<T> out({out_len, cout});
    kernels::gemm(cols.data(), kv.data(), out.data(), out_len, width, cout, false, false, false);
    if (has_bias) {
        const Tensor<T>& bv = bias.value();
        for (int t = 0; t < out_len; ++t) {
            auto row = out.row(t);
            for (int c = 0; c < cout; ++c) {
                row[c] += bv[c];
            }
        }
    }
    auto backward = [x, kernel, bias, has_bias, cols = std::move(cols), stride, pad, len, cin, k,
                     cout, out_len, width](Tape<T>& t, const Tensor<T>& g) {
        if (t.requires_grad(kernel.id)) {
            kernels::gemm(cols.data(), g.data(), t.grad(kernel.id).data(), width, out_len, cout,
                          true, false, true);
        }
        if (has_bias && t.requires_grad(bias.id)) {
            Tensor<T>& gb = t.grad(bias.id);
            for (int r = 0; r < out_len; ++r) {
                auto row = g.row(r);
                for (int c = 0; c < cout; ++c) {
                    gb[c] += row[c];
                }
            }
        }
        if (t.requires_grad(x.id)) {
            Tensor<T> dcols({out_len, width});
            kernels::gemm(g.data(), t.value(kernel.id).data(), dcols.data(), out_len, cout, width,
                          false, true, false);
            Tensor<T>& gx = t.grad(x.id);
            for (int r = 0; r < out_len; ++r) {
                const T* s = dcols.data() + static_cast<std::size_t>(r) * width;
                for (int j = 0; j < k; ++j) {
                    const int src = r * stride + j - pad;
                    if (src >= 0 && src < len) {
                        T* d = gx.data() + static_cast<std::size_t>(src) * cin;
                        for (int c = 0; c < cin; ++c) {
                            d[c] += s[j * cin + c];
                        }
                    }
                }
            }
        }
    };
    if (has_bias) {
        return x.tape->record(std::move(out), {x, kernel, bias}, std::move(backward));
    }
    return x.tape->record(std::move(out), {x, kernel}, std::move(backward));
}

template <typename T>
Var<T> gelu(Var<T> x) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) {
        v = kernels::gelu(v);
    }
    return x.tape->record(std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& xv = t.value(x.id);
        Tensor<T>& gx = t.grad(x.id);
        for (std::size_t i = 0; i < xv.size(); ++i) {
            gx[i] += g[i] * kernels::gelu_derivative(xv[i]);
        }
    });
}

template <typename T>
Var<T> tanh(Var<T> x) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) {
        v = std::tanh(v);
    }
    const int self = static_cast<int>(x.tape->size());
    return x.tape->record(std::move(out), {x}, [x, self](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& y = t.value(self);
        Tensor<T>& gx = t.grad(x.id);
        for (std::size_t i = 0; i < y.size(); ++i) {
            gx[i] += g[i] * (T(1) - y[i] * y[i]);
        }
    });
}

template <typename T>
Var<T> softmax_temperature(Var<T> z, T tau) {
    Tensor<T> out = kernels::softmax_rows(z.value(), tau);
    const int self = static_cast<int>(z.tape->size());
    return z.tape->record(std::move(out), {z}, [z, tau, self](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& y = t.value(self);
        Tensor<T>& gz = t.grad(z.id);
        for (int r = 0; r < y.rows(); ++r) {
            auto yr = y.row(r);
            auto gr = g.row(r);
            auto out = gz.row(r);
            T dot = 0;
            for (std::size_t c = 0; c < yr.size(); ++c) {
                dot += gr[c] * yr[c];
            }
            for (std::size_t c = 0; c < yr.size(); ++c) {
                out[c] += yr[c] * (gr[c] - dot) / tau;
            }
        }
    });
}

template <typename T>
Var<T> log_softmax_temperature(Var<T> z, T tau) {
    Tensor<T> out = kernels::log_softmax_rows(z.value(), tau);
    const int self = static_cast<int>(z.tape->size());
    return z.tape->record(std::move(out), {z}, [z, tau, self](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& y = t.value(self);
        Tensor<T>& gz = t.grad(z.id);
        for (int r = 0; r < y.rows(); ++r) {
            auto yr = y.row(r);
            auto gr = g.row(r);
            auto out = gz.row(r);
            T total = 0;
            for (T v : gr) {
                total += v;
            }
            for (std::size_t c = 0; c < yr.size(); ++c) {
                out[c] += (gr[c] - std::exp(yr[c]) * total) / tau;
            }
        }
    });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
    const Tensor<T>& xv = x.value();
    require_matrix(xv, "layer_norm");
    Tensor<T> out = kernels::layer_norm(xv, gamma.value(), beta.value(), eps);
    const int n = xv.rows();
    const int d = xv.cols();
    // Saved normalized activations and inverse std per row.
    Tensor<T> xhat({n, d});
    std::vector<T> inv_std(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) {
        auto in = xv.row(r);
        T mean = 0;
        for (T v : in) {
            mean += v;
        }
        mean /= T(d);
        T var = 0;
        for (T v : in) {
            var += (v - mean) * (v - mean);
        }
        var /= T(d);
        const T inv = T(1) / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(r)] = inv;
        auto xh = xhat.row(r);
        for (int c = 0; c < d; ++c) {
            xh[c] = (in[c] - mean) * inv;
        }
    }
    return x.tape->record(
        std::move(out), {x, gamma, beta},
        [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n, d](
            Tape<T>& t, const Tensor<T>& g) {
            const Tensor<T>& gm = t.value(gamma.id);
            if (t.requires_grad(gamma.id)) {
                Tensor<T>& gg = t.grad(gamma.id);
                for (int r = 0; r < n; ++r) {
                    for (int c = 0; c < d; ++c) {
                        gg[c] += g.at(r, c) * xhat.at(r, c);
                    }
                }
            }
            if (t.requires_grad(beta.id)) {
                Tensor<T>& gb = t.grad(beta.id);
                for (int r = 0; r < n; ++r) {
                    for (int c = 0; c < d; ++c) {
                        gb[c] += g.at(r, c);
                    }
                }
            }
            if (t.requires_grad(x.id)) {
                Tensor<T>& gx = t.grad(x.id);
                std::vector<T> dxhat(static_cast<std::size_t>(d));
                for (int r = 0; r < n; ++r) {
                    T mean_d = 0;
                    T mean_dx = 0;
                    for (int c = 0; c < d; ++c) {
                        dxhat[c] = g.at(r, c) * gm[c];
                        mean_d += dxhat[c];
                        mean_dx += dxhat[c] * xhat.at(r, c);
                    }
                    mean_d /= T(d);
                    mean_dx /= T(d);
                    const T inv = inv_std[static_cast<std::size_t>(r)];
                    for (int c = 0; c < d; ++c) {
                        gx.at(r, c) += inv * (dxhat[c] - mean_d - xhat.at(r, c) * mean_dx);
                    }
                }
            }
        });
}

template <typename T>
Var<T> embedding(Var<T> table, std::span<const int> ids) {
    const Tensor<T>& tv = table.value();
    require_matrix(tv, "embedding");
    const int vocab = tv.rows();
    const int d = tv.cols();
    std::vector<int> rows(ids.begin(), ids.end());
    Tensor<T> out({static_cast<int>(rows.size()), d});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= vocab) {
            throw ContractError("embedding: id " + std::to_string(rows[i]) + " outside table of " +
                                std::to_string(vocab) + " rows");
        }
        auto src = tv.row(rows[i]);
        std::copy(src.begin(), src.end(), out.row(static_cast<int>(i)).begin());
    }
    return table.tape->record(std::move(out), {table},
                              [table, rows = std::move(rows), d](Tape<T>& t, const Tensor<T>& g) {
                                  Tensor<T>& gt = t.grad(table.id);
                                  for (std::size_t i = 0; i < rows.size(); ++i) {
                                      auto dst = gt.row(rows[i]);
                                      auto src = g.row(static_cast<int>(i));
                                      for (int c = 0; c < d; ++c) {
                                          dst[c] += src[c];
                                      }
                                  }
                              });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    if (parts.empty()) {
        throw ContractError("concat_rows: no inputs");
    }
    const int d = parts.front().cols();
    int total = 0;
    for (const auto& p : parts) {
        if (p.tape != parts.front().tape) {
            throw ContractError("concat_rows: operands recorded on different tapes");
        }
        if (p.cols() != d) {
            throw ContractError("concat_rows: width " + std::to_string(p.cols()) + " vs " +
                                std::to_string(d));
        }
        total += p.rows();
    }
    Tensor<T> out({total, d});
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const Tensor<T>& v = p.value();
        std::copy(v.data(), v.data() + v.size(), out.data() + offset);
        offset += v.size();
    }
    return parts.front().tape->record_n(std::move(out), parts,
                                        [parts](Tape<T>& t, const Tensor<T>& g) {
                                            std::size_t off = 0;
                                            for (const auto& p : parts) {
                                                const std::size_t n = t.value(p.id).size();
                                                if (t.requires_grad(p.id)) {
                                                    Tensor<T>& gp = t.grad(p.id);
                                                    for (std::size_t i = 0; i < n; ++i) {
                                                        gp[i] += g[off + i];
                                                    }
                                                }
                                                off += n;
                                            }
                                        });
}

template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
    require_same_tape(a, b, "concat_cols");
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (av.rows() != bv.rows()) {
        throw ContractError("concat_cols: row counts " + std::to_string(av.rows()) + " and " +
                            std::to_string(bv.rows()) + " differ");
    }
    const int n = av.rows();
    const int da = av.cols();
    const int db = bv.cols();
    Tensor<T> out({n, da + db});
    for (int r = 0; r < n; ++r) {
        std::copy(av.row(r).begin(), av.row(r).end(), out.row(r).begin());
        std::copy(bv.row(r).begin(), bv.row(r).end(), out.row(r).begin() + da);
    }
    return a.tape->record(std::move(out), {a, b}, [a, b, n, da, db](Tape<T>& t, const Tensor<T>& g) {
        if (t.requires_grad(a.id)) {
            Tensor<T>& ga = t.grad(a.id);
            for (int r = 0; r < n; ++r) {
                for (int c = 0; c < da; ++c) {
                    ga.at(r, c) += g.at(r, c);
                }
            }
        }
        if (t.requires_grad(b.id)) {
            Tensor<T>& gb = t.grad(b.id);
            for (int r = 0; r < n; ++r) {
                for (int c = 0; c < db; ++c) {
                    gb.at(r, c) += g.at(r, da + c);
                }
            }
        }
    });
}

template <typename T>
Var<T> slice_rows(Var<T> x, int begin, int end) {
    const Tensor<T>& xv = x.value();
    if (begin < 0 || end > xv.rows() || begin > end) {
        throw ContractError("slice_rows: range [" + std::to_string(begin) + ", " +
                            std::to_string(end) + ") outside " + shape_str(xv.shape()));
    }
    const int d = xv.cols();
    Tensor<T> out({end - begin, d});
    std::copy(xv.data() + static_cast<std::size_t>(begin) * d,
              xv.data() + static_cast<std::size_t>(end) * d, out.data());
    return x.tape->record(std::move(out), {x}, [x, begin, d](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& gx = t.grad(x.id);
        T* dst = gx.data() + static_cast<std::size_t>(begin) * d;
        for (std::size_t i = 0; i < g.size(); ++i) {
            dst[i] += g[i];
        }
    });
}

template <typename T>
Var<T> select_rows(Var<T> x, std::span<const int> rows) {
    const Tensor<T>& xv = x.value();
    const int d = xv.cols();
    std::vector<int> idx(rows.begin(), rows.end());
    Tensor<T> out({static_cast<int>(idx.size()), d});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= xv.rows()) {
            throw ContractError("select_rows: row " + std::to_string(idx[i]) + " outside " +
                                shape_str(xv.shape()));
        }
        std::copy(xv.row(idx[i]).begin(), xv.row(idx[i]).end(),
                  out.row(static_cast<int>(i)).begin());
    }
    return x.tape->record(std::move(out), {x}, [x, idx = std::move(idx), d](Tape<T>& t,
                                                                          const Tensor<T>& g) {
        Tensor<T>& gx = t.grad(x.id);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            auto dst = gx.row(idx[i]);
            auto src = g.row(static_cast<int>(i));
            for (int c = 0; c < d; ++c) {
                dst[c] += src[c];
            }
        }
    });
}

template <typename T>
Var<T> mean_rows(Var<T> x) {
    const Tensor<T>& xv = x.value();
    const int n = xv.rows();
    const int d = xv.cols();
    if (n < 1) {
        throw ContractError("mean_rows: input has no rows");
    }
    Tensor<T> out({1, d});
    for (int r = 0; r < n; ++r) {
        auto row = xv.row(r);
        for (int c = 0; c < d; ++c) {
            out[c] += row[c];
        }
    }
    for (auto& v : out.values()) {
        v /= T(n);
    }
    return x.tape->record(std::move(out), {x}, [x, n, d](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& gx = t.grad(x.id);
        for (int r = 0; r < n; ++r) {
            for (int c = 0; c < d; ++c) {
                gx.at(r, c) += g[c] / T(n);
            }
        }
    });
}

template <typename T>
Var<T> interpolate_rows(Var<T> x, int factor) {
    if (factor < 1) {
        throw ParameterError("interpolate_rows: factor must be >= 1");
    }
    const Tensor<T>& xv = x.value();
    const int n = xv.rows();
    const int d = xv.cols();
    const int m = n * factor;
    std::vector<int> lo(static_cast<std::size_t>(m));
    std::vector<int> hi(static_cast<std::size_t>(m));
    std::vector<T> w(static_cast<std::size_t>(m));
    Tensor<T> out({m, d});
    for (int i = 0; i < m; ++i) {
        const int base = i / factor;
        const int frac = i % factor;
        int l = base;
        int h = std::min(base + 1, n - 1);
        T wt = T(frac) / T(factor);
        if (base >= n - 1) {
            l = n - 1;
            h = n - 1;
            wt = 0;
        }
        lo[static_cast<std::size_t>(i)] = l;
        hi[static_cast<std::size_t>(i)] = h;
        w[static_cast<std::size_t>(i)] = wt;
        for (int c = 0; c < d; ++c) {
            out.at(i, c) = (T(1) - wt) * xv.at(l, c) + wt * xv.at(h, c);
        }
    }
    return x.tape->record(
        std::move(out), {x},
        [x, lo = std::move(lo), hi = std::move(hi), w = std::move(w), m, d](Tape<T>& t,
                                                                           const Tensor<T>& g) {
            Tensor<T>& gx = t.grad(x.id);
            for (int i = 0; i < m; ++i) {
                const T wt = w[static_cast<std::size_t>(i)];
                for (int c = 0; c < d; ++c) {
                    gx.at(lo[static_cast<std::size_t>(i)], c) += (T(1) - wt) * g.at(i, c);
                    gx.at(hi[static_cast<std::size_t>(i)], c) += wt * g.at(i, c);
                }
            }
        });
}

template <typename T>
Var<T> lstm(Var<T> x, Var<T> w_ih, Var<T> w_hh, Var<T> bias, bool reverse) {
    const Tensor<T>& xv = x.value();
    const Tensor<T>& wih = w_ih.value();
    const Tensor<T>& whh = w_hh.value();
    require_matrix(xv, "lstm");
    const int steps = xv.rows();
    const int in = xv.cols();
    const int hidden = whh.rows();
    const int g4 = 4 * hidden;
    if (wih.rank() != 2 || wih.rows() != in || wih.cols() != g4 || whh.cols() != g4 ||
        static_cast<int>(bias.value().size()) != g4) {
        throw ContractError("lstm: input " + shape_str(xv.shape()) + ", w_ih " +
                            shape_str(wih.shape()) + ", w_hh " + shape_str(whh.shape()));
    }
    // Pre-activations for the input path, all steps at once.
    Tensor<T> zx = kernels::linear(xv, wih, &bias.value());
    Tensor<T> gates({steps, g4});  // activated i, f, g, o
    Tensor<T> cell({steps, hidden});
    Tensor<T> h_prev({steps, hidden});  // recurrent input at each step
    Tensor<T> c_prev({steps, hidden});
    Tensor<T> out({steps, hidden});
    std::vector<T> h(static_cast<std::size_t>(hidden), T(0));
    std::vector<T> c(static_cast<std::size_t>(hidden), T(0));
    std::vector<T> z(static_cast<std::size_t>(g4));
    for (int s = 0; s < steps; ++s) {
        const int t = reverse ? steps - 1 - s : s;
        std::copy(h.begin(), h.end(), h_prev.row(t).begin());
        std::copy(c.begin(), c.end(), c_prev.row(t).begin());
        std::copy(zx.row(t).begin(), zx.row(t).end(), z.begin());
        kernels::gemm(h.data(), whh.data(), z.data(), 1, hidden, g4, false, false, true);
        auto gt = gates.row(t);
        for (int j = 0; j < hidden; ++j) {
            const T ig = sigmoid(z[j]);
            const T fg = sigmoid(z[hidden + j]);
            const T gg = std::tanh(z[2 * hidden + j]);
            const T og = sigmoid(z[3 * hidden + j]);
            gt[j] = ig;
            gt[hidden + j] = fg;
            gt[2 * hidden + j] = gg;
            gt[3 * hidden + j] = og;
            c[j] = fg * c[j] + ig * gg;
            h[j] = og * std::tanh(c[j]);
        }
        std::copy(c.begin(), c.end(), cell.row(t).begin());
        std::copy(h.begin(), h.end(), out.row(t).begin());
    }
    return x.tape->record(
        std::move(out), {x, w_ih, w_hh, bias},
        [x, w_ih, w_hh, bias, reverse, steps, in, hidden, g4, gates = std::move(gates),
         cell = std::move(cell), h_prev = std::move(h_prev),
         c_prev = std::move(c_prev)](Tape<T>& t, const Tensor<T>& g) {
            const Tensor<T>& whh_v = t.value(w_hh.id);
            Tensor<T> dz({steps, g4});
            std::vector<T> dh_next(static_cast<std::size_t>(hidden), T(0));
            std::vector<T> dc_next(static_cast<std::size_t>(hidden), T(0));
            for (int s = steps - 1; s >= 0; --s) {
                const int tt = reverse ? steps - 1 - s : s;
                auto gt = gates.row(tt);
                auto ct = cell.row(tt);
                auto cp = c_prev.row(tt);
                auto gr = g.row(tt);
                auto dzr = dz.row(tt);
                for (int j = 0; j < hidden; ++j) {
                    const T ig = gt[j];
                    const T fg = gt[hidden + j];
                    const T gg = gt[2 * hidden + j];
                    const T og = gt[3 * hidden + j];
                    const T tc = std::tanh(ct[j]);
                    const T dh = gr[j] + dh_next[j];
                    const T dc = dh * og * (T(1) - tc * tc) + dc_next[j];
                    dzr[j] = dc * gg * ig * (T(1) - ig);
                    dzr[hidden + j] = dc * cp[j] * fg * (T(1) - fg);
                    dzr[2 * hidden + j] = dc * ig * (T(1) - gg * gg);
                    dzr[3 * hidden + j] = dh * tc * og * (T(1) - og);
                    dc_next[j] = dc * fg;
                }
                kernels::gemm(dzr.data(), whh_v.data(), dh_next.data(), 1, g4, hidden, false, true,
                              false);
            }
            if (t.requires_grad(w_hh.id)) {
                kernels::gemm(h_prev.data(), dz.data(), t.grad(w_hh.id).data(), hidden, steps, g4,
                              true, false, true);
            }
            if (t.requires_grad(w_ih.id)) {
                kernels::gemm(t.value(x.id).data(), dz.data(), t.grad(w_ih.id).data(), in, steps,
                              g4, true, false, true);
            }
            if (t.requires_grad(bias.id)) {
                Tensor<T>& gb = t.grad(bias.id);
                for (int r = 0; r < steps; ++r) {
                    auto row = dz.row(r);
                    for (int c = 0; c < g4; ++c) {
                        gb[c] += row[c];
                    }
                }
            }
            if (t.requires_grad(x.id)) {
                kernels::gemm(dz.data(), t.value(w_ih.id).data(), t.grad(x.id).data(), steps, g4,
                              in, false, true, true);
            }
        });
}

template <typename T>
Var<T> rotary(Var<T> x, int heads, int position_offset) {
    Tensor<T> out = kernels::rotary(x.value(), heads, position_offset);
    return x.tape->record(std::move(out), {x},
                          [x, heads, position_offset](Tape<T>& t, const Tensor<T>& g) {
                              // The rotation is orthogonal: its adjoint is the inverse rotation.
                              add_into(t.grad(x.id),
                                       kernels::rotary(g, heads, position_offset, true));
                          });
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, int heads, bool causal) {
    require_same_tape(q, k, "attention");
    require_same_tape(q, v, "attention");
    const Tensor<T>& qv = q.value();
    const Tensor<T>& kv = k.value();
    const Tensor<T>& vv = v.value();
    const int n = qv.rows();
    const int d = qv.cols();
    if (kv.rows() != n || vv.rows() != n) {
        throw ContractError("attention: self-attention needs equal lengths for q, k, v");
    }
    Tensor<T> out = kernels::attention(qv, kv, vv, heads, causal, 0);
    const int dh = d / heads;
    const T scale = T(1) / std::sqrt(T(dh));
    return q.tape->record(
        std::move(out), {q, k, v},
        [q, k, v, heads, causal, n, d, dh, scale](Tape<T>& t, const Tensor<T>& g) {
            const Tensor<T>& qv = t.value(q.id);
            const Tensor<T>& kv = t.value(k.id);
            const Tensor<T>& vv = t.value(v.id);
            const bool need_q = t.requires_grad(q.id);
            const bool need_k = t.requires_grad(k.id);
            const bool need_v = t.requires_grad(v.id);
            Tensor<T> qh({n, dh});
            Tensor<T> kh({n, dh});
            Tensor<T> vh({n, dh});
            Tensor<T> gh({n, dh});
            Tensor<T> p({n, n});
            Tensor<T> dp({n, n});
            Tensor<T> tmp({n, dh});
            for (int h = 0; h < heads; ++h) {
                for (int r = 0; r < n; ++r) {
                    for (int c = 0; c < dh; ++c) {
                        qh.at(r, c) = qv.at(r, h * dh + c);
                        kh.at(r, c) = kv.at(r, h * dh + c);
                        vh.at(r, c) = vv.at(r, h * dh + c);
                        gh.at(r, c) = g.at(r, h * dh + c);
                    }
                }
                // Recompute the attention weights for this head.
                kernels::gemm(qh.data(), kh.data(), p.data(), n, dh, n, false, true, false);
                for (int i = 0; i < n; ++i) {
                    const int limit = causal ? i + 1 : n;
                    T mx = -std::numeric_limits<T>::infinity();
                    for (int j = 0; j < limit; ++j) {
                        mx = std::max(mx, p.at(i, j) * scale);
                    }
                    T total = 0;
                    for (int j = 0; j < limit; ++j) {
                        p.at(i, j) = std::exp(p.at(i, j) * scale - mx);
                        total += p.at(i, j);
                    }
                    for (int j = 0; j < limit; ++j) {
                        p.at(i, j) /= total;
                    }
                    for (int j = limit; j < n; ++j) {
                        p.at(i, j) = 0;
                    }
                }
                if (need_v) {
                    kernels::gemm(p.data(), gh.data(), tmp.data(), n, n, dh, true, false, false);
                    Tensor<T>& gv = t.grad(v.id);
                    for (int r = 0; r < n; ++r) {
                        for (int c = 0; c < dh; ++c) {
                            gv.at(r, c + h * dh) += tmp.at(r, c);
                        }
                    }
                }
                if (!need_q && !need_k) {
                    continue;
                }
                kernels::gemm(gh.data(), vh.data(), dp.data(), n, dh, n, false, true, false);
                // dS = P * (dP - rowsum(dP * P)), folded with the 1/sqrt(dh) scale.
                for (int i = 0; i < n; ++i) {
                    T dot = 0;
                    for (int j = 0; j < n; ++j) {
                        dot += dp.at(i, j) * p.at(i, j);
                    }
                    for (int j = 0; j < n; ++j) {
                        dp.at(i, j) = p.at(i, j) * (dp.at(i, j) - dot) * scale;
                    }
                }
                if (need_q) {
                    kernels::gemm(dp.data(), kh.data(), tmp.data(), n, n, dh, false, false, false);
                    Tensor<T>& gq = t.grad(q.id);
                    for (int r = 0; r < n; ++r) {
                        for (int c = 0; c < dh; ++c) {
                            gq.at(r, c + h * dh) += tmp.at(r, c);
                        }
                    }
                }
                if (need_k) {
                    kernels::gemm(dp.data(), qh.data(), tmp.data(), n, n, dh, true, false, false);
                    Tensor<T>& gk = t.grad(k.id);
                    for (int r = 0; r < n; ++r) {
                        for (int c = 0; c < dh; ++c) {
                            gk.at(r, c + h * dh) += tmp.at(r, c);
                        }
                    }
                }
            }
        });
}

#define EMGLLM_INSTANTIATE_OPS(T)                                                              \
    template Var<T> add<T>(Var<T>, Var<T>);                                                    \
    template Var<T> mul<T>(Var<T>, Var<T>);                                                    \
    template Var<T> scale<T>(Var<T>, T);                                                       \
    template Var<T> sum<T>(Var<T>);                                                            \
    template Var<T> sum_squares<T>(Var<T>);                                                    \
    template Var<T> matmul<T>(Var<T>, Var<T>);                                                 \
    template Var<T> linear<T>(Var<T>, Var<T>, Var<T>);                                         \
    template Var<T> conv1d<T>(Var<T>, Var<T>, Var<T>, int, Padding);                           \
    template Var<T> gelu<T>(Var<T>);                                                           \
    template Var<T> tanh<T>(Var<T>);                                                           \
    template Var<T> softmax_temperature<T>(Var<T>, T);                                         \
    template Var<T> log_softmax_temperature<T>(Var<T>, T);                                     \
    template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, T);                                  \
    template Var<T> embedding<T>(Var<T>, std::span<const int>);                                \
    template Var<T> concat_rows<T>(const std::vector<Var<T>>&);                                \
    template Var<T> concat_cols<T>(Var<T>, Var<T>);                                            \
    template Var<T> slice_rows<T>(Var<T>, int, int);                                           \
    template Var<T> select_rows<T>(Var<T>, std::span<const int>);                              \
    template Var<T> mean_rows<T>(Var<T>);                                                      \
    template Var<T> interpolate_rows<T>(Var<T>, int);                                          \
    template Var<T> lstm<T>(Var<T>, Var<T>, Var<T>, Var<T>, bool);                             \
    template Var<T> rotary<T>(Var<T>, int, int);                                               \
    template Var<T> attention<T>(Var<T>, Var<T>, Var<T>, int, bool);

EMGLLM_INSTANTIATE_OPS(float)
EMGLLM_INSTANTIATE_OPS(double)

}  // namespace emgllm::numerics
