// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "emgllm/corpus/corpus.hpp"

namespace emgllm::signal {

using corpus::EmgRecording;
using numerics::Tensor;

constexpr int kFeaturesPerChannel = 14;

struct FrameSpec {
    int frame_length = 26;
    int hop = 8;
    int stft_size = 16;
    int lowpass_window = 9;

    void validate() const;
};

struct FeatureSequence {
    Tensor<float> frames;  // [T_f x 14C]
    double frame_rate = 0.0;
    int channels = 0;
    FrameSpec spec;
};

// Per-column mean and standard deviation of training data.
struct ColumnStats {
    std::vector<double> mean;
    std::vector<double> stddev;

    bool empty() const { return mean.empty(); }
};

ColumnStats compute_column_stats(const std::vector<const Tensor<float>*>& matrices);
void apply_column_stats(Tensor<float>& matrix, const ColumnStats& stats);

// Linear-interpolation resampling of every column.
Tensor<float> resample_linear(const Tensor<float>& signal, double from_rate, double to_rate);

// DC removal, resampling to target_rate, then standardization with stats when
// given. Stats must come from the training split.
EmgRecording preprocess(const EmgRecording& recording, double target_rate,
                        const ColumnStats* stats = nullptr);

int feature_frame_count(int length, const FrameSpec& spec);

// Moving average over a window, applied twice; edges average the samples
// that exist.
std::vector<double> double_moving_average(std::span<const double> x, int window);

// Adjacent pairs of strictly opposite sign. Zeros take the sign of the last
// nonzero sample; leading zeros count as positive.
int zero_crossings(std::span<const double> x);

// |DFT| bins 0..n/2 of x (n = x.size()).
std::vector<double> dft_magnitudes(std::span<const double> x);

// The 14 per-channel features of one frame, written to out.
void frame_features(std::span<const double> frame, const FrameSpec& spec, std::span<float> out);

FeatureSequence extract_features(const EmgRecording& recording, const FrameSpec& spec);

std::vector<std::complex<double>> hilbert_analytic(std::span<const double> x);

// Output channel = Re(analytic(x) e^{i theta}). theta unset draws one angle in
// [0, 2 pi) from seed, shared by all channels.
EmgRecording augment_hilbert_phase(const EmgRecording& recording, std::optional<double> theta,
                                   std::uint64_t seed);

// out[t] = x[clamp(t - shift)].
std::vector<float> shift_channel(std::span<const float> x, int shift);

EmgRecording augment_channel_shift(const EmgRecording& recording, int max_shift,
                                   std::uint64_t seed);

// Per-utterance feature cache: <dir>/<id>.f32 and <dir>/<id>.json.
void save_feature_cache(const std::filesystem::path& dir, const std::string& utterance_id,
                        const FeatureSequence& features);
FeatureSequence load_feature_cache(const std::filesystem::path& dir,
                                   const std::string& utterance_id);

}  // namespace emgllm::signal
