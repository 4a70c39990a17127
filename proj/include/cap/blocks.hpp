// SPDX-License-Identifier: Apache-2.0
//
// Structured-block partition of the prunable sites: one block per attention
// head per layer (its Q/K/V column slices plus the matching O row slice) and
// one block per FFN hidden neuron (its W1 column plus W2 row).

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cap/model.hpp"

namespace cap {

enum class BlockGranularity { head, ffn_neuron };

enum class SliceKind { rows, cols };

struct BlockSlice {
    std::string block_id;
    std::string site_id;
    SliceKind kind = SliceKind::cols;
    int begin = 0;
    int end = 0;  // exclusive
};

struct BlockPartition {
    std::vector<BlockSlice> slices;
    // Distinct block ids in a stable order (heads first per layer, then neurons).
    std::vector<std::string> block_ids;
};

BlockPartition block_partition(const Model& model);

std::vector<BlockSlice> slices_of_block(const BlockPartition& p, const std::string& block_id);

std::int64_t block_entry_count(const Model& model, const BlockPartition& p,
                               const std::string& block_id);

// Zeroes the mask entries covered by a block.
void mask_out_block(Model& model, const BlockPartition& p, const std::string& block_id);

bool is_head_block(const std::string& block_id);
int block_layer(const std::string& block_id);

// Builds a physically smaller model with the removed heads/neurons deleted
// from the weight matrices outright, for mask-vs-delete equivalence checks.
Model structurally_removed(const Model& model, const BlockPartition& p,
                           const std::vector<std::string>& removed_block_ids);

}  // namespace cap
