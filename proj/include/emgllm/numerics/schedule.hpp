// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>

namespace emgllm::numerics {

// Linear warmup to lr_max over the first warmup_fraction of steps, then linear
// decay to lr_max * floor_ratio at the last step.  step is 0-based.
inline double scheduled_lr(std::int64_t step, std::int64_t total_steps, double lr_max,
                           double warmup_fraction, double floor_ratio = 0.1) {
    const auto total = std::max<std::int64_t>(total_steps, 1);
    const auto warmup = static_cast<std::int64_t>(warmup_fraction * static_cast<double>(total));
    if (step < warmup) {
        return lr_max * static_cast<double>(step + 1) / static_cast<double>(warmup);
    }
    const auto span = std::max<std::int64_t>(total - warmup - 1, 1);
    const double frac = std::clamp(static_cast<double>(step - warmup) / static_cast<double>(span), 0.0, 1.0);
    return lr_max * (1.0 - (1.0 - floor_ratio) * frac);
}

}  // namespace emgllm::numerics
