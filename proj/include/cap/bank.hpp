// SPDX-License-Identifier: Apache-2.0
//
// Pre-encoded representation banks: one frozen model encodes the corpus once,
// vectors are stored off the training path (fp32), and contrastive steps fetch
// N entries at a time. Fetches copy exactly the selected vectors; instrumented
// counters expose the per-fetch working set.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cap/contrastive.hpp"
#include "cap/data.hpp"
#include "cap/model.hpp"

namespace cap {

struct RepresentationBank {
    SourceRole source_role = SourceRole::pretrained;
    double source_sparsity = 0.0;  // r' for snapshots
    std::int64_t created_at_step = 0;
    int dim = 0;
    std::vector<std::int64_t> example_indices;
    std::vector<int> labels;
    std::vector<float> vectors;  // row-major, size() == entries * dim

    std::int64_t entry_count() const {
        return static_cast<std::int64_t>(example_indices.size());
    }

    // Running fetch instrumentation (values copied into the training step).
    mutable std::int64_t last_fetch_values = 0;
    mutable std::int64_t max_fetch_values = 0;
};

struct FetchResult {
    FetchedView view;  // |entries| = min(N, bank size), vectors N x d
    SourceRole source_role = SourceRole::pretrained;
    double source_sparsity = 0.0;
};

// One entry per example, encoded with the frozen model's pooled
// representation; no gradient state is retained.
RepresentationBank encode_bank(const Model& frozen_model, const Dataset& examples,
                               SourceRole role, double source_sparsity,
                               std::int64_t created_at_step, int encode_batch_size = 64);

// Fetches min(N, bank size) entries. Entries listed in `include_indices`
// (anchor batch examples) are always present; the remainder is sampled
// without replacement under `rng`. With N >= bank size the whole bank is
// returned in stable order.
FetchResult fetch(const RepresentationBank& bank, int n, Rng& rng,
                  const std::vector<std::int64_t>& include_indices = {});

struct Footprint {
    std::int64_t entry_count = 0;
    std::int64_t value_count = 0;  // entry_count * dim
};

Footprint footprint(const RepresentationBank& bank);

// Binary file: magic, u32 dim, u64 count, then count*dim fp32 vectors, plus a
// JSON sidecar (<path>.json) with indices, labels, role, sparsity, and step.
void save_bank(const RepresentationBank& bank, const std::string& path);
RepresentationBank load_bank(const std::string& path);

}  // namespace cap
