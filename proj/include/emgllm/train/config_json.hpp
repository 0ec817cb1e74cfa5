// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <set>
#include <string>

#include "emgllm/error.hpp"
#include "emgllm/train/train.hpp"
#include "json.hpp"

namespace emgllm::train {

using Json = nlohmann::ordered_json;

// Reads keys of one JSON object; missing keys keep their defaults and
// finish() rejects keys nobody asked for.
class StrictReader {
   public:
    StrictReader(const Json& object, std::string path);

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!object_.contains(key)) {
            return;
        }
        try {
            out = object_.at(key).get<T>();
        } catch (const Json::exception& e) {
            throw SchemaError("config key '" + qualified(key) + "': " + e.what());
        }
    }
    const Json* child(const char* key);
    std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    void finish() const;

   private:
    const Json& object_;
    std::string path_;
    std::set<std::string> seen_;
};

Json to_json(const corpus::SyntheticConfig& c);
Json to_json(const PipelineConfig& c);
Json to_json(const adaptor::AdaptorConfig& c);
Json to_json(const lm::TinyLmConfig& c);
Json to_json(const lm::PretrainConfig& c);
Json to_json(const lm::LoraConfig& c);
Json to_json(const objective::LossSpec& c);
Json to_json(const TrainConfig& c);
Json to_json(const decode::DecodeConfig& c);
Json to_json(const decode::PidHeadConfig& c);

void from_json(const Json& j, const std::string& path, corpus::SyntheticConfig& c);
void from_json(const Json& j, const std::string& path, PipelineConfig& c);
void from_json(const Json& j, const std::string& path, adaptor::AdaptorConfig& c);
void from_json(const Json& j, const std::string& path, lm::TinyLmConfig& c);
void from_json(const Json& j, const std::string& path, lm::PretrainConfig& c);
void from_json(const Json& j, const std::string& path, lm::LoraConfig& c);
void from_json(const Json& j, const std::string& path, objective::LossSpec& c);
void from_json(const Json& j, const std::string& path, TrainConfig& c);
void from_json(const Json& j, const std::string& path, decode::DecodeConfig& c);
void from_json(const Json& j, const std::string& path, decode::PidHeadConfig& c);

}  // namespace emgllm::train
