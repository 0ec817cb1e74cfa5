// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "emgllm/numerics/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "emgllm/error.hpp"

namespace emgllm::numerics {

namespace fs = std::filesystem;
using Json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "archive I/O assumes little-endian");

namespace {

fs::path blob_path(const fs::path& manifest) {
    fs::path p = manifest;
    p.replace_extension(".bin");
    return p;
}

}  // namespace

bool Archive::contains(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) {
            return true;
        }
    }
    return false;
}

const Tensor<float>& Archive::get(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) {
            return t.value;
        }
    }
    throw SchemaError("checkpoint has no tensor '" + name + "'");
}

std::int64_t Archive::byte_count() const {
    std::int64_t n = 0;
    for (const auto& t : tensors) {
        n += static_cast<std::int64_t>(t.value.size() * sizeof(float));
    }
    return n;
}

void save_archive(const fs::path& manifest_path, const Archive& archive) {
    if (manifest_path.has_parent_path()) {
        fs::create_directories(manifest_path.parent_path());
    }
    Json table = Json::array();
    std::int64_t offset = 0;
    const fs::path blob = blob_path(manifest_path);
    std::ofstream bs(blob, std::ios::binary | std::ios::trunc);
    if (!bs) {
        throw IoError("cannot write " + blob.string());
    }
    for (const auto& t : archive.tensors) {
        table.push_back({{"name", t.name}, {"shape", t.value.shape()}, {"offset", offset}});
        const auto bytes = static_cast<std::streamsize>(t.value.size() * sizeof(float));
        bs.write(reinterpret_cast<const char*>(t.value.data()), bytes);
        offset += bytes;
    }
    bs.close();
    if (!bs) {
        throw IoError("failed writing " + blob.string());
    }
    Json m;
    m["format"] = "emgllm-archive";
    m["version"] = kArchiveVersion;
    m["blob"] = blob.filename().string();
    m["blob_bytes"] = offset;
    m["meta"] = archive.meta;
    m["tensors"] = table;
    std::ofstream ms(manifest_path, std::ios::trunc);
    if (!ms) {
        throw IoError("cannot write " + manifest_path.string());
    }
    ms << m.dump(2) << '\n';
}

Archive load_archive(const fs::path& manifest_path) {
    std::ifstream ms(manifest_path);
    if (!ms) {
        throw MissingArtifactError("checkpoint manifest not found: " + manifest_path.string());
    }
    Json m;
    try {
        ms >> m;
    } catch (const Json::exception& e) {
        throw SchemaError(manifest_path.string() + ": invalid JSON (" + e.what() + ")");
    }
    if (m.value("format", "") != "emgllm-archive") {
        throw SchemaError(manifest_path.string() + ": not an emgllm checkpoint");
    }
    const int version = m.value("version", -1);
    if (version != kArchiveVersion) {
        throw SchemaError(manifest_path.string() + ": checkpoint version " + std::to_string(version) +
                          ", expected " + std::to_string(kArchiveVersion));
    }
    const fs::path blob = manifest_path.parent_path() / m.at("blob").get<std::string>();
    const auto declared = m.at("blob_bytes").get<std::int64_t>();
    std::error_code ec;
    const auto actual = static_cast<std::int64_t>(fs::file_size(blob, ec));
    if (ec) {
        throw MissingArtifactError("checkpoint blob not found: " + blob.string());
    }
    if (actual != declared) {
        throw IoError("checkpoint blob " + blob.string() + " has " + std::to_string(actual) +
                      " bytes, manifest declares " + std::to_string(declared) +
                      (actual < declared ? " (truncated)" : ""));
    }
    std::vector<char> bytes(static_cast<std::size_t>(actual));
    std::ifstream bs(blob, std::ios::binary);
    bs.read(bytes.data(), static_cast<std::streamsize>(actual));
    if (!bs) {
        throw IoError("failed reading " + blob.string());
    }
    Archive a;
    a.meta = m.value("meta", Json::object());
    for (const auto& entry : m.at("tensors")) {
        NamedTensor t;
        t.name = entry.at("name").get<std::string>();
        Shape shape = entry.at("shape").get<Shape>();
        const auto offset = entry.at("offset").get<std::int64_t>();
        t.value = Tensor<float>(shape);
        const auto n = static_cast<std::int64_t>(t.value.size() * sizeof(float));
        if (offset < 0 || offset + n > actual) {
            throw SchemaError("tensor '" + t.name + "' lies outside the checkpoint blob");
        }
        std::memcpy(t.value.data(), bytes.data() + offset, static_cast<std::size_t>(n));
        a.tensors.push_back(std::move(t));
    }
    return a;
}

template <typename T>
void append_parameters(Archive& archive, const ParameterSet<T>& params, const std::string& prefix,
                       bool with_optimizer) {
    for (const auto& p : params) {
        archive.tensors.push_back({prefix + p.name, p.value.template cast<float>()});
        if (with_optimizer) {
            auto moment = [&](const Tensor<T>& t) {
                return t.size() == p.value.size() ? t.template cast<float>() : Tensor<float>(p.value.shape());
            };
            archive.tensors.push_back({prefix + p.name + "#m", moment(p.adam_m)});
            archive.tensors.push_back({prefix + p.name + "#v", moment(p.adam_v)});
        }
    }
}

template <typename T>
void restore_parameters(const Archive& archive, ParameterSet<T>& params, const std::string& prefix,
                        bool with_optimizer) {
    for (auto& p : params) {
        const auto& v = archive.get(prefix + p.name);
        if (v.shape() != p.value.shape()) {
            throw SchemaError("checkpoint tensor '" + p.name + "' has shape " + shape_str(v.shape()) +
                              ", model expects " + shape_str(p.value.shape()));
        }
        p.value = v.template cast<T>();
        if (with_optimizer) {
            p.adam_m = archive.get(prefix + p.name + "#m").template cast<T>();
            p.adam_v = archive.get(prefix + p.name + "#v").template cast<T>();
        }
    }
}

template void append_parameters<float>(Archive&, const ParameterSet<float>&, const std::string&, bool);
template void append_parameters<double>(Archive&, const ParameterSet<double>&, const std::string&, bool);
template void restore_parameters<float>(const Archive&, ParameterSet<float>&, const std::string&, bool);
template void restore_parameters<double>(const Archive&, ParameterSet<double>&, const std::string&, bool);

}  // namespace emgllm::numerics
