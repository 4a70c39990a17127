// SPDX-License-Identifier: Apache-2.0
//
// Checkpoints: a directory holding metadata.json (config, step, sparsity,
// role, tensor manifest) and tensors.bin (raw little-endian fp64 payloads in
// registry order). Serialization is deterministic so byte-equality doubles as
// a teacher-immutability check.

#pragma once

#include <cstdint>
#include <string>

#include "cap/contrastive.hpp"
#include "cap/model.hpp"

namespace cap {

struct CheckpointMeta {
    SourceRole role = SourceRole::pretrained;
    std::int64_t step = 0;
    double sparsity = 0.0;
};

void save_checkpoint(const Model& model, const std::string& dir, const CheckpointMeta& meta);

struct LoadedCheckpoint {
    Model model;
    CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& dir);

// FNV over metadata.json + tensors.bin bytes.
std::uint64_t checkpoint_digest(const std::string& dir);

}  // namespace cap
