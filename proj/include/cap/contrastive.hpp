// SPDX-License-Identifier: Apache-2.0
//
// Multi-positive InfoNCE over pre-encoded representations, positive-set
// construction, and the per-source contrastive losses (pretrained model,
// snapshots, fine-tuned model), each with supervised and unsupervised parts.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cap/common.hpp"

namespace cap {

enum class SourceRole { pretrained, finetuned, snapshot, pruned };

std::string to_string(SourceRole r);
SourceRole source_role_from_string(const std::string& s);

enum class ContrastModule { prc, snc, fic };
enum class ContrastMode { sup, unsup };

std::string to_string(ContrastModule m);
ContrastModule contrast_module_from_string(const std::string& s);

struct ContrastiveConfig {
    double temperature = 0.1;
    int bank_size = 4096;  // N entries fetched per contrast set
    bool prc = true;
    bool snc = true;
    bool fic = true;
    bool sup_enabled = true;
    bool unsup_enabled = true;
    bool snc_pooled = false;     // pool all snapshot fetches into one contrast set
    bool resample_fetch = true;  // fresh fetch each step instead of a fixed one

    bool module_enabled(ContrastModule m) const;
    void validate() const;
    bool operator==(const ContrastiveConfig&) const = default;
};

struct BankEntryMeta {
    std::int64_t example_index = 0;
    int label = 0;
    SourceRole role = SourceRole::pretrained;
    double sparsity = 0.0;  // source model sparsity r' (snapshots)
};

struct PositiveSet {
    int anchor_index = 0;
    std::vector<int> positive_indices;  // indices into the fetched entries
    ContrastModule module = ContrastModule::prc;
    ContrastMode mode = ContrastMode::unsup;

    bool empty() const { return positive_indices.empty(); }
};

// Result is in [-1, 1]; throws NumericalError on a zero vector.
double cosine_similarity(const Vec& a, const Vec& b);

// Eq.-style multi-positive InfoNCE: the denominator sums over all N entries,
// positives included. `entries` is N x d, one fetched vector per row.
double info_nce(const Vec& anchor, const Mat& entries, const PositiveSet& positives, double tau);

struct InfoNceGrad {
    double loss = 0.0;
    Vec d_anchor;
};

InfoNceGrad info_nce_with_grad(const Vec& anchor, const Mat& entries, const PositiveSet& positives,
                               double tau);

// Positive-set construction. Unsupervised positives share the anchor's example
// index; supervised positives share its label. Snapshot entries only qualify
// when their source sparsity is strictly below `anchor_sparsity`.
PositiveSet build_positive_set(ContrastModule module, ContrastMode mode,
                               std::int64_t anchor_example_index, int anchor_label,
                               const std::vector<BankEntryMeta>& bank_metadata,
                               double anchor_sparsity = 100.0);

// One fetched contrast set from one frozen source model.
struct FetchedView {
    Mat vectors;  // N x d
    std::vector<BankEntryMeta> meta;
};

FetchedView pool_views(const std::vector<FetchedView>& views);

struct ModuleLossResult {
    double loss = 0.0;
    Mat d_anchors;  // same shape as the anchor matrix; zero when !with_grad
};

// Mean over anchors of (unsup + sup) InfoNCE against each view; multi-view
// losses (snapshots) are averaged across views. Anchors whose positive set is
// empty are skipped and leave the mean's denominator. Disabled modules and
// empty view lists yield exactly zero.
ModuleLossResult module_loss(ContrastModule module, const Mat& anchors,
                             const std::vector<std::int64_t>& anchor_indices,
                             const std::vector<int>& anchor_labels,
                             const std::vector<FetchedView>& views,
                             const ContrastiveConfig& config, double anchor_sparsity,
                             bool with_grad);

}  // namespace cap
