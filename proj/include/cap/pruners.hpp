// SPDX-License-Identifier: Apache-2.0
//
// Pruning criteria and mask machinery: first-order structured importance,
// movement scores with Top-K reservation, soft-movement thresholding with a
// sigmoid regularizer, and the magnitude baseline.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cap/blocks.hpp"
#include "cap/model.hpp"

namespace cap {

enum class Criterion { first_order, movement, soft_movement, magnitude };

std::string to_string(Criterion c);

// Running per-block importance for structured first-order pruning. The
// per-batch term is |sum over the block of grad * weight| by default; the
// abs-outside variant accumulates signed sums and takes the absolute value
// at read time.
struct ImportanceAccumulator {
    Criterion criterion = Criterion::first_order;
    int step_count = 0;
    bool abs_per_batch = true;
    std::map<std::string, double> block_scores;

    void reset() {
        step_count = 0;
        block_scores.clear();
    }
};

// Folds one evaluated batch (model.backward already run) into the accumulator.
void accumulate_first_order(ImportanceAccumulator& acc, const Model& model,
                            const BlockPartition& partition);

std::map<std::string, double> first_order_block_importance(const ImportanceAccumulator& acc,
                                                           const BlockPartition& partition);

// Movement update, Eq.-style additive accumulation with a straight-through
// gradient: the caller passes dL/d(weight .* mask), and every entry's score
// moves regardless of its mask.
void movement_update(MaskedParameterSite& site, const Mat& grad_wrt_masked_weight,
                     double learning_rate_s);

// Gradient-descent pressure from the soft-movement regularizer
// reg_weight * sum sigmoid(score): scores drift down each step.
void soft_movement_regularizer_update(MaskedParameterSite& site, double regularizer_weight,
                                      double learning_rate_s);

Mat magnitude_scores(const MaskedParameterSite& site);

// Keeps exactly floor((1 - r/100) * count) top-scoring entries; ties keep the
// lower flat (column-major) index. r == 100 is rejected.
Mat topk_mask(const Mat& scores, double target_sparsity_percent);

struct ThresholdConfig {
    double threshold = 0.0;
    double regularizer_weight = 1e-2;

    void validate() const {
        if (regularizer_weight < 0.0) throw ConfigError("regularizer_weight must be >= 0");
    }
};

struct ThresholdMaskResult {
    Mat mask;
    double regularizer_value = 0.0;
    bool degenerate = false;  // every score fell below the threshold
};

ThresholdMaskResult threshold_mask(const Mat& scores, const ThresholdConfig& cfg);

enum class TopkScope { per_site, global };

// Recomputes masks for all prunable sites at the requested sparsity. Global
// scope ranks one pooled score list so the kept count is exact across the
// whole census; per-site scope applies topk_mask per site.
void apply_topk_masks(Model& model, double target_sparsity_percent, TopkScope scope);

struct StructuredPruneResult {
    std::vector<std::string> removed;
    std::int64_t removed_entries = 0;
};

// Picks the lowest-importance alive blocks whose cumulative entry count lands
// closest to fraction * original census without exceeding it by more than one
// block. Never selects the last alive head of a layer.
StructuredPruneResult structured_prune_step(const std::map<std::string, double>& block_importances,
                                            const std::vector<std::string>& alive_blocks,
                                            double fraction, const Model& model,
                                            const BlockPartition& partition);

std::uint64_t mask_digest(const Model& model);

}  // namespace cap
