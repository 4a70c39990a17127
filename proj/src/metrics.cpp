// SPDX-License-Identifier: Apache-2.0

#include "cap/metrics.hpp"

#include <filesystem>

#include "cap/common.hpp"

namespace cap {

MetricsWriter::MetricsWriter(const std::string& path) : path_(path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(parent, ec);
    }
    out_.open(path, std::ios::trunc);
    if (!out_) throw RunError("metrics stream is not writable: " + path);
}

void MetricsWriter::emit(const nlohmann::ordered_json& record) {
    out_ << record.dump() << "\n";
    if (!out_) throw RunError("metrics stream write failed: " + path_);
}

void MetricsWriter::flush() { out_.flush(); }

}  // namespace cap
