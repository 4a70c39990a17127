// SPDX-License-Identifier: Apache-2.0
//
// Append-only JSONL metrics stream. Records carry no wall-clock values so a
// replayed run produces a byte-identical stream.

#pragma once

#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

namespace cap {

class MetricsWriter {
public:
    // Throws RunError at construction when the directory is not writable.
    explicit MetricsWriter(const std::string& path);

    void emit(const nlohmann::ordered_json& record);
    void flush();

    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::ofstream out_;
};

}  // namespace cap
