// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "emgllm/numerics/parameters.hpp"
#include "json.hpp"

namespace emgllm::numerics {

// Checkpoint layout: <stem>.json holds the metadata and a tensor table
// (name, shape, byte offset); <stem>.bin holds little-endian float32 data.
inline constexpr int kArchiveVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor<float> value;
};

struct Archive {
    nlohmann::json meta;
    std::vector<NamedTensor> tensors;

    bool contains(const std::string& name) const;
    const Tensor<float>& get(const std::string& name) const;
    std::int64_t byte_count() const;
};

// manifest_path must end in .json; the blob goes next to it with .bin.
void save_archive(const std::filesystem::path& manifest_path, const Archive& archive);
Archive load_archive(const std::filesystem::path& manifest_path);

// Parameter values (and optionally Adam moments as "<name>#m" / "<name>#v").
template <typename T>
void append_parameters(Archive& archive, const ParameterSet<T>& params, const std::string& prefix,
                       bool with_optimizer);
// Copies every tensor of params from the archive; shapes must match.
template <typename T>
void restore_parameters(const Archive& archive, ParameterSet<T>& params, const std::string& prefix,
                        bool with_optimizer);

}  // namespace emgllm::numerics
