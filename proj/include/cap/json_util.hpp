// SPDX-License-Identifier: Apache-2.0
//
// Strict-keys JSON reading (unknown keys are config errors, with the full key
// path in the message) and ModelConfig serialization shared by config and
// checkpoint code.

#pragma once

#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "cap/model.hpp"

namespace cap {

class StrictReader {
public:
    StrictReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    bool has(const char* key) const { return j_.contains(key); }

    template <typename T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(path_ + key + ": invalid value");
        }
    }

    StrictReader child(const char* key) {
        seen_.insert(key);
        if (!j_.contains(key)) {
            static const nlohmann::json empty = nlohmann::json::object();
            return StrictReader(empty, path_ + key + ".");
        }
        return StrictReader(j_.at(key), path_ + key + ".");
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) throw ConfigError(path_ + key + ": unknown key");
        }
    }

    const std::string& path() const { return path_; }

private:
    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

nlohmann::ordered_json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path);

}  // namespace cap
