// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "emgllm/signal/signal.hpp"

#include <fftw3.h>

#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <random>

#include "emgllm/error.hpp"
#include "emgllm/numerics/random.hpp"
#include "json.hpp"

namespace emgllm::signal {

namespace fs = std::filesystem;
using Json = nlohmann::json;

void FrameSpec::validate() const {
    if (stft_size < 2) {
        throw ParameterError("stft_size must be >= 2");
    }
    if (frame_length < stft_size) {
        throw ParameterError("frame_length " + std::to_string(frame_length) +
                             " is shorter than stft_size " + std::to_string(stft_size));
    }
    if (hop < 1) {
        throw ParameterError("hop must be >= 1");
    }
    if (lowpass_window < 1 || lowpass_window % 2 == 0) {
        throw ParameterError("lowpass_window must be odd and positive");
    }
}

ColumnStats compute_column_stats(const std::vector<const Tensor<float>*>& matrices) {
    if (matrices.empty()) {
        throw ContractError("compute_column_stats: no data");
    }
    const int cols = matrices.front()->cols();
    std::vector<double> sum(static_cast<std::size_t>(cols), 0.0);
    std::vector<double> sq(static_cast<std::size_t>(cols), 0.0);
    double n = 0;
    for (const auto* m : matrices) {
        if (m->cols() != cols) {
            throw ContractError("compute_column_stats: column count mismatch");
        }
        for (int r = 0; r < m->rows(); ++r) {
            for (int c = 0; c < cols; ++c) {
                const double v = m->at(r, c);
                sum[static_cast<std::size_t>(c)] += v;
                sq[static_cast<std::size_t>(c)] += v * v;
            }
        }
        n += m->rows();
    }
    ColumnStats s;
    for (int c = 0; c < cols; ++c) {
        const double mean = sum[static_cast<std::size_t>(c)] / n;
        const double var = std::max(0.0, sq[static_cast<std::size_t>(c)] / n - mean * mean);
        s.mean.push_back(mean);
        s.stddev.push_back(std::sqrt(var) > 1e-8 ? std::sqrt(var) : 1.0);
    }
    return s;
}

void apply_column_stats(Tensor<float>& matrix, const ColumnStats& stats) {
    if (static_cast<int>(stats.mean.size()) != matrix.cols()) {
        throw ContractError("column stats width " + std::to_string(stats.mean.size()) +
                            " does not match " + std::to_string(matrix.cols()));
    }
    for (int r = 0; r < matrix.rows(); ++r) {
        auto row = matrix.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) {
            row[c] = static_cast<float>((row[c] - stats.mean[c]) / stats.stddev[c]);
        }
    }
}

Tensor<float> resample_linear(const Tensor<float>& signal, double from_rate, double to_rate) {
    if (!(from_rate > 0) || !(to_rate > 0)) {
        throw ParameterError("sample rates must be > 0");
    }
    const int len = signal.rows();
    const int c = signal.cols();
    if (from_rate == to_rate || len == 0) {
        return signal;
    }
    const int out_len = std::max(1, static_cast<int>(std::lround(len * to_rate / from_rate)));
    Tensor<float> out({out_len, c});
    const double step = from_rate / to_rate;
    for (int i = 0; i < out_len; ++i) {
        const double pos = std::min(i * step, static_cast<double>(len - 1));
        const int i0 = static_cast<int>(std::floor(pos));
        const int i1 = std::min(i0 + 1, len - 1);
        const double w = pos - i0;
        for (int ch = 0; ch < c; ++ch) {
            out.at(i, ch) =
                static_cast<float>((1 - w) * signal.at(i0, ch) + w * signal.at(i1, ch));
        }
    }
    return out;
}

EmgRecording preprocess(const EmgRecording& recording, double target_rate,
                        const ColumnStats* stats) {
    if (!(target_rate > 0)) {
        throw ParameterError("target_rate must be > 0");
    }
    EmgRecording out = recording;
    const int len = recording.length();
    const int c = recording.channels();
    for (int ch = 0; ch < c; ++ch) {
        double mean = 0;
        for (int t = 0; t < len; ++t) {
            const float v = recording.signal.at(t, ch);
            if (!std::isfinite(v)) {
                throw NumericError("non-finite sample in " + recording.utterance_id);
            }
            mean += v;
        }
        mean /= std::max(1, len);
        for (int t = 0; t < len; ++t) {
            out.signal.at(t, ch) = static_cast<float>(recording.signal.at(t, ch) - mean);
        }
    }
    out.signal = resample_linear(out.signal, recording.sample_rate, target_rate);
    out.sample_rate = target_rate;
    if (stats != nullptr && !stats->empty()) {
        apply_column_stats(out.signal, *stats);
    }
    return out;
}

int feature_frame_count(int length, const FrameSpec& spec) {
    if (length < spec.frame_length) {
        return 0;
    }
    return (length - spec.frame_length) / spec.hop + 1;
}

std::vector<double> double_moving_average(std::span<const double> x, int window) {
    const int n = static_cast<int>(x.size());
    const int half = window / 2;
    auto pass = [&](const std::vector<double>& in) {
        std::vector<double> prefix(in.size() + 1, 0.0);
        for (std::size_t i = 0; i < in.size(); ++i) {
            prefix[i + 1] = prefix[i] + in[i];
        }
        std::vector<double> out(in.size());
        for (int i = 0; i < n; ++i) {
            const int lo = std::max(0, i - half);
            const int hi = std::min(n, i + half + 1);
            out[static_cast<std::size_t>(i)] =
                (prefix[static_cast<std::size_t>(hi)] - prefix[static_cast<std::size_t>(lo)]) /
                (hi - lo);
        }
        return out;
    };
    return pass(pass(std::vector<double>(x.begin(), x.end())));
}

int zero_crossings(std::span<const double> x) {
    int count = 0;
    int sign = 1;
    bool first = true;
    for (double v : x) {
        const int s = v > 0 ? 1 : (v < 0 ? -1 : sign);
        if (!first && s != sign) {
            ++count;
        }
        sign = s;
        first = false;
    }
    return count;
}

namespace {

std::mutex plan_mutex;

// FFTW planning is not thread safe; plans are cached and executed with the
// new-array interface.
fftw_plan r2c_plan(int n) {
    static std::map<int, fftw_plan> plans;
    std::lock_guard<std::mutex> lock(plan_mutex);
    auto it = plans.find(n);
    if (it != plans.end()) {
        return it->second;
    }
    std::vector<double> in(static_cast<std::size_t>(n));
    std::vector<fftw_complex> out(static_cast<std::size_t>(n / 2 + 1));
    fftw_plan p = fftw_plan_dft_r2c_1d(n, in.data(), out.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
    plans[n] = p;
    return p;
}

fftw_plan c2c_plan(int n, int sign) {
    static std::map<std::pair<int, int>, fftw_plan> plans;
    std::lock_guard<std::mutex> lock(plan_mutex);
    auto it = plans.find({n, sign});
    if (it != plans.end()) {
        return it->second;
    }
    std::vector<fftw_complex> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
    fftw_plan p = fftw_plan_dft_1d(n, a.data(), b.data(), sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    plans[{n, sign}] = p;
    return p;
}

}  // namespace

std::vector<double> dft_magnitudes(std::span<const double> x) {
    const int n = static_cast<int>(x.size());
    if (n < 1) {
        return {};
    }
    std::vector<double> in(x.begin(), x.end());
    std::vector<fftw_complex> out(static_cast<std::size_t>(n / 2 + 1));
    fftw_execute_dft_r2c(r2c_plan(n), in.data(), out.data());
    std::vector<double> mag;
    for (const auto& c : out) {
        mag.push_back(std::hypot(c[0], c[1]));
    }
    return mag;
}

void frame_features(std::span<const double> frame, const FrameSpec& spec, std::span<float> out) {
    const std::size_t n = frame.size();
    const auto low = double_moving_average(frame, spec.lowpass_window);
    std::vector<double> high(n);
    double low_mean = 0, low_power = 0, high_power = 0, high_rect = 0;
    for (std::size_t i = 0; i < n; ++i) {
        high[i] = frame[i] - low[i];
        low_mean += low[i];
        low_power += low[i] * low[i];
        high_power += high[i] * high[i];
        high_rect += std::abs(high[i]);
    }
    out[0] = static_cast<float>(low_mean / n);
    out[1] = static_cast<float>(low_power / n);
    out[2] = static_cast<float>(high_power / n);
    out[3] = static_cast<float>(high_rect / n);
    out[4] = static_cast<float>(zero_crossings(high));
    // Spectral part: the centred stft_size samples of the raw frame.
    const std::size_t offset = (n - static_cast<std::size_t>(spec.stft_size)) / 2;
    const auto mag = dft_magnitudes(frame.subspan(offset, static_cast<std::size_t>(spec.stft_size)));
    for (std::size_t b = 0; b < mag.size() && 5 + b < out.size(); ++b) {
        out[5 + b] = static_cast<float>(mag[b]);
    }
}

FeatureSequence extract_features(const EmgRecording& recording, const FrameSpec& spec) {
    spec.validate();
    if (spec.stft_size / 2 + 1 + 5 != kFeaturesPerChannel) {
        throw ParameterError("stft_size must be 16 to give 14 features per channel");
    }
    const int len = recording.length();
    const int c = recording.channels();
    if (spec.frame_length > len) {
        throw ContractError("utterance shorter than one frame (" + std::to_string(len) + " < " +
                            std::to_string(spec.frame_length) + " samples)");
    }
    const int frames = feature_frame_count(len, spec);
    FeatureSequence fs;
    fs.frames = Tensor<float>({frames, c * kFeaturesPerChannel});
    fs.frame_rate = recording.sample_rate / spec.hop;
    fs.channels = c;
    fs.spec = spec;
    std::vector<double> buf(static_cast<std::size_t>(spec.frame_length));
    for (int f = 0; f < frames; ++f) {
        auto row = fs.frames.row(f);
        for (int ch = 0; ch < c; ++ch) {
            for (int i = 0; i < spec.frame_length; ++i) {
                buf[static_cast<std::size_t>(i)] = recording.signal.at(f * spec.hop + i, ch);
            }
            frame_features(buf, spec,
                           row.subspan(static_cast<std::size_t>(ch) * kFeaturesPerChannel,
                                       kFeaturesPerChannel));
        }
    }
    return fs;
}

std::vector<std::complex<double>> hilbert_analytic(std::span<const double> x) {
    const int n = static_cast<int>(x.size());
    if (n < 4) {
        throw ContractError("hilbert_analytic needs at least 4 samples");
    }
    std::vector<std::complex<double>> buf(x.begin(), x.end());
    std::vector<std::complex<double>> spec(static_cast<std::size_t>(n));
    fftw_execute_dft(c2c_plan(n, FFTW_FORWARD), reinterpret_cast<fftw_complex*>(buf.data()),
                     reinterpret_cast<fftw_complex*>(spec.data()));
    for (int k = 1; k < n; ++k) {
        if (2 * k < n) {
            spec[static_cast<std::size_t>(k)] *= 2.0;
        } else if (2 * k > n) {
            spec[static_cast<std::size_t>(k)] = 0.0;
        }
    }
    fftw_execute_dft(c2c_plan(n, FFTW_BACKWARD), reinterpret_cast<fftw_complex*>(spec.data()),
                     reinterpret_cast<fftw_complex*>(buf.data()));
    for (auto& v : buf) {
        v /= static_cast<double>(n);
    }
    return buf;
}

EmgRecording augment_hilbert_phase(const EmgRecording& recording, std::optional<double> theta,
                                   std::uint64_t seed) {
    double angle = 0;
    if (theta) {
        angle = *theta;
    } else {
        numerics::Rng rng(numerics::derive_seed(seed, "hilbert"));
        angle = std::uniform_real_distribution<double>(0.0, 2 * M_PI)(rng);
    }
    const std::complex<double> rot = std::polar(1.0, angle);
    EmgRecording out = recording;
    const int len = recording.length();
    std::vector<double> x(static_cast<std::size_t>(len));
    for (int ch = 0; ch < recording.channels(); ++ch) {
        // The mean is a real-only bin and cannot rotate; it is carried over.
        double mean = 0;
        for (int t = 0; t < len; ++t) {
            x[static_cast<std::size_t>(t)] = recording.signal.at(t, ch);
            mean += x[static_cast<std::size_t>(t)];
        }
        mean /= len;
        for (auto& v : x) {
            v -= mean;
        }
        const auto a = hilbert_analytic(x);
        for (int t = 0; t < len; ++t) {
            out.signal.at(t, ch) =
                static_cast<float>(mean + (a[static_cast<std::size_t>(t)] * rot).real());
        }
    }
    return out;
}

std::vector<float> shift_channel(std::span<const float> x, int shift) {
    const int n = static_cast<int>(x.size());
    std::vector<float> out(x.size());
    for (int t = 0; t < n; ++t) {
        out[static_cast<std::size_t>(t)] = x[static_cast<std::size_t>(std::clamp(t - shift, 0, n - 1))];
    }
    return out;
}

EmgRecording augment_channel_shift(const EmgRecording& recording, int max_shift,
                                   std::uint64_t seed) {
    const int len = recording.length();
    if (max_shift < 0 || 4 * max_shift >= len) {
        throw ParameterError("max_shift " + std::to_string(max_shift) + " must be in [0, T/4) for T=" +
                             std::to_string(len));
    }
    EmgRecording out = recording;
    if (max_shift == 0) {
        return out;
    }
    numerics::Rng rng(numerics::derive_seed(seed, "channel_shift"));
    std::uniform_int_distribution<int> dist(-max_shift, max_shift);
    std::vector<float> col(static_cast<std::size_t>(len));
    for (int ch = 0; ch < recording.channels(); ++ch) {
        const int s = dist(rng);
        for (int t = 0; t < len; ++t) {
            col[static_cast<std::size_t>(t)] = recording.signal.at(t, ch);
        }
        const auto shifted = shift_channel(col, s);
        for (int t = 0; t < len; ++t) {
            out.signal.at(t, ch) = shifted[static_cast<std::size_t>(t)];
        }
    }
    return out;
}

void save_feature_cache(const fs::path& dir, const std::string& utterance_id,
                        const FeatureSequence& features) {
    fs::create_directories(dir);
    corpus::write_f32(dir / (utterance_id + ".f32"), features.frames);
    Json j = {{"frame_rate", features.frame_rate},
              {"channels", features.channels},
              {"dim", features.frames.cols()},
              {"frames", features.frames.rows()},
              {"spec",
               {{"frame_length", features.spec.frame_length},
                {"hop", features.spec.hop},
                {"stft_size", features.spec.stft_size},
                {"lowpass_window", features.spec.lowpass_window}}}};
    std::ofstream os(dir / (utterance_id + ".json"), std::ios::trunc);
    if (!os) {
        throw IoError("cannot write feature sidecar for " + utterance_id);
    }
    os << j.dump(2) << '\n';
}

FeatureSequence load_feature_cache(const fs::path& dir, const std::string& utterance_id) {
    std::ifstream is(dir / (utterance_id + ".json"));
    if (!is) {
        throw MissingArtifactError("missing feature cache for utterance '" + utterance_id + "'");
    }
    FeatureSequence fs;
    try {
        const Json j = Json::parse(is);
        fs.frame_rate = j.at("frame_rate").get<double>();
        fs.channels = j.at("channels").get<int>();
        const int dim = j.at("dim").get<int>();
        const auto& s = j.at("spec");
        fs.spec.frame_length = s.at("frame_length").get<int>();
        fs.spec.hop = s.at("hop").get<int>();
        fs.spec.stft_size = s.at("stft_size").get<int>();
        fs.spec.lowpass_window = s.at("lowpass_window").get<int>();
        fs.frames = corpus::read_f32(dir / (utterance_id + ".f32"), dim);
        if (fs.frames.rows() != j.at("frames").get<int>()) {
            throw SchemaError("feature cache for '" + utterance_id + "': frame count mismatch");
        }
    } catch (const Json::exception& e) {
        throw SchemaError("feature cache sidecar for '" + utterance_id + "': " + e.what());
    }
    return fs;
}

}  // namespace emgllm::signal
