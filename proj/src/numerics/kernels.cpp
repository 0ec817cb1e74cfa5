// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "emgllm/numerics/ops.hpp"

namespace emgllm::numerics {

int conv1d_output_length(int length, int kernel, int stride, Padding padding) {
    if (kernel < 1 || stride < 1) {
        throw ContractError("conv1d: kernel and stride must be >= 1 (kernel=" +
                            std::to_string(kernel) + ", stride=" + std::to_string(stride) + ")");
    }
    if (padding == Padding::SameLeft) {
        return (length + stride - 1) / stride;
    }
    if (length < kernel) {
        return 0;
    }
    return (length - kernel) / stride + 1;
}

int conv1d_left_pad(int length, int kernel, int stride, Padding padding) {
    if (padding == Padding::None) {
        return 0;
    }
    const int out = conv1d_output_length(length, kernel, stride, padding);
    return std::max(0, (out - 1) * stride + kernel - length);
}

namespace kernels {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstStrided = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using MutStrided = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;

}  // namespace

template <typename T>
void gemm(const T* a, const T* b, T* c, int m, int k, int n, bool trans_a, bool trans_b,
          bool accumulate) {
    MutMap<T> cm(c, m, n);
    if (!accumulate) {
        cm.setZero();
    }
    if (m == 0 || n == 0 || k == 0) {
        return;
    }
    ConstMap<T> am(a, trans_a ? k : m, trans_a ? m : k);
    ConstMap<T> bm(b, trans_b ? n : k, trans_b ? k : n);
    if (!trans_a && !trans_b) {
        cm.noalias() += am * bm;
    } else if (trans_a && !trans_b) {
        cm.noalias() += am.transpose() * bm;
    } else if (!trans_a && trans_b) {
        cm.noalias() += am * bm.transpose();
    } else {
        cm.noalias() += am.transpose() * bm.transpose();
    }
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
        throw ContractError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                            shape_str(b.shape()));
    }
    Tensor<T> out({a.rows(), b.cols()});
    gemm(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols(), false, false, false);
    return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias) {
    if (x.rank() != 2 || w.rank() != 2 || x.cols() != w.rows()) {
        throw ContractError("linear: input " + shape_str(x.shape()) + " vs weight " +
                            shape_str(w.shape()));
    }
    Tensor<T> out({x.rows(), w.cols()});
    gemm(x.data(), w.data(), out.data(), x.rows(), x.cols(), w.cols(), false, false, false);
    if (bias != nullptr) {
        if (static_cast<int>(bias->size()) != w.cols()) {
            throw ContractError("linear: bias length " + std::to_string(bias->size()) +
                                " vs output width " + std::to_string(w.cols()));
        }
        for (int r = 0; r < out.rows(); ++r) {
            auto row = out.row(r);
            for (int c = 0; c < out.cols(); ++c) {
                row[c] += (*bias)[c];
            }
        }
    }
    return out;
}

template <typename T>
T gelu(T x) {
    return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
}

template <typename T>
T gelu_derivative(T x) {
    const T cdf = T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
    const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * T(M_PI));
    return cdf + x * pdf;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    const int d = x.cols();
    if (static_cast<int>(gamma.size()) != d || static_cast<int>(beta.size()) != d) {
        throw ContractError("layer_norm: gain/bias width does not match " + shape_str(x.shape()));
    }
    Tensor<T> out(x.shape());
    for (int r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        auto o = out.row(r);
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
        for (int c = 0; c < d; ++c) {
            o[c] = gamma[c] * (in[c] - mean) * inv + beta[c];
        }
    }
    return out;
}

template <typename T>
Tensor<T> rotary(const Tensor<T>& x, int heads, int position_offset, bool inverse) {
    const int d = x.cols();
    if (heads < 1 || d % heads != 0 || (d / heads) % 2 != 0) {
        throw ContractError("rotary: width " + std::to_string(d) +
                            " must split into heads of even size");
    }
    const int dh = d / heads;
    Tensor<T> out(x.shape());
    for (int r = 0; r < x.rows(); ++r) {
        const double pos = static_cast<double>(position_offset + r);
        auto in = x.row(r);
        auto o = out.row(r);
        for (int i = 0; i < dh / 2; ++i) {
            const double freq = std::pow(10000.0, -2.0 * i / dh);
            const T cs = static_cast<T>(std::cos(pos * freq));
            const T sn = static_cast<T>(inverse ? -std::sin(pos * freq) : std::sin(pos * freq));
            for (int h = 0; h < heads; ++h) {
                const int a = h * dh + 2 * i;
                const T x0 = in[a];
                const T x1 = in[a + 1];
                o[a] = x0 * cs - x1 * sn;
                o[a + 1] = x0 * sn + x1 * cs;
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& z, T tau) {
    if (!(tau > T(0))) {
        throw ParameterError("softmax temperature must be > 0");
    }
    Tensor<T> out(z.shape());
    for (int r = 0; r < z.rows(); ++r) {
        auto in = z.row(r);
        auto o = out.row(r);
        T mx = -std::numeric_limits<T>::infinity();
        for (T v : in) {
            mx = std::max(mx, v);
        }
        T total = 0;
        for (std::size_t c = 0; c < in.size(); ++c) {
            o[c] = std::exp((in[c] - mx) / tau);
            total += o[c];
        }
        for (auto& v : o) {
            v /= total;
        }
    }
    return out;
}

template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& z, T tau) {
    if (!(tau > T(0))) {
        throw ParameterError("softmax temperature must be > 0");
    }
    Tensor<T> out(z.shape());
    for (int r = 0; r < z.rows(); ++r) {
        auto in = z.row(r);
        auto o = out.row(r);
        T mx = -std::numeric_limits<T>::infinity();
        for (T v : in) {
            mx = std::max(mx, v);
        }
        T total = 0;
        for (T v : in) {
            total += std::exp((v - mx) / tau);
        }
        const T lse = std::log(total);
        for (std::size_t c = 0; c < in.size(); ++c) {
            o[c] = (in[c] - mx) / tau - lse;
        }
    }
    return out;
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int heads,
                    bool causal, int query_offset) {
    const int tq = q.rows();
    const int tk = k.rows();
    const int d = q.cols();
    if (k.cols() != d || v.cols() != d || v.rows() != tk || heads < 1 || d % heads != 0) {
        throw ContractError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                            ", v " + shape_str(v.shape()) + ", heads " + std::to_string(heads));
    }
    const int dh = d / heads;
    const T scale = T(1) / std::sqrt(T(dh));
    Tensor<T> out({tq, d});
    RowMat<T> scores(tq, tk);
    for (int h = 0; h < heads; ++h) {
        ConstStrided<T> qh(q.data() + h * dh, tq, dh, Eigen::OuterStride<>(d));
        ConstStrided<T> kh(k.data() + h * dh, tk, dh, Eigen::OuterStride<>(d));
        ConstStrided<T> vh(v.data() + h * dh, tk, dh, Eigen::OuterStride<>(d));
        MutStrided<T> oh(out.data() + h * dh, tq, dh, Eigen::OuterStride<>(d));
        scores.noalias() = (qh * kh.transpose()) * scale;
        for (int i = 0; i < tq; ++i) {
            const int limit = causal ? std::min(tk, query_offset + i + 1) : tk;
            T mx = -std::numeric_limits<T>::infinity();
            for (int j = 0; j < limit; ++j) {
                mx = std::max(mx, scores(i, j));
            }
            T total = 0;
            for (int j = 0; j < limit; ++j) {
                scores(i, j) = std::exp(scores(i, j) - mx);
                total += scores(i, j);
            }
            for (int j = 0; j < limit; ++j) {
                scores(i, j) /= total;
            }
            for (int j = limit; j < tk; ++j) {
                scores(i, j) = 0;
            }
        }
        oh.noalias() = scores * vh;
    }
    return out;
}

#define EMGLLM_INSTANTIATE_KERNELS(T)                                                             \
    template void gemm<T>(const T*, const T*, T*, int, int, int, bool, bool, bool);               \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);           \
    template T gelu<T>(T);                                                                        \
    template T gelu_derivative<T>(T);                                                             \
    template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);    \
    template Tensor<T> rotary<T>(const Tensor<T>&, int, int, bool);                               \
    template Tensor<T> softmax_rows<T>(const Tensor<T>&, T);                                      \
    template Tensor<T> log_softmax_rows<T>(const Tensor<T>&, T);                                  \
    template Tensor<T> attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int,    \
                                    bool, int);

EMGLLM_INSTANTIATE_KERNELS(float)
EMGLLM_INSTANTIATE_KERNELS(double)

}  // namespace kernels
}  // namespace emgllm::numerics
