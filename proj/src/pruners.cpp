// SPDX-License-Identifier: Apache-2.0

#include "cap/pruners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cap {

std::string to_string(Criterion c) {
    switch (c) {
        case Criterion::first_order: return "first_order";
        case Criterion::movement: return "movement";
        case Criterion::soft_movement: return "soft_movement";
        case Criterion::magnitude: return "magnitude";
    }
    return "?";
}

void accumulate_first_order(ImportanceAccumulator& acc, const Model& model,
                            const BlockPartition& partition) {
    std::map<std::string, double> batch_sums;
    for (const auto& slice : partition.slices) {
        const MaskedParameterSite* site = nullptr;
        for (const auto* s : model.prunable_sites()) {
            if (s->site_id == slice.site_id) {
                site = s;
                break;
            }
        }
        if (site == nullptr) throw StateError("partition references unknown site " + slice.site_id);
        const Mat gw = site->grad_eff.cwiseProduct(site->effective());
        const double part = (slice.kind == SliceKind::cols)
                                ? gw.middleCols(slice.begin, slice.end - slice.begin).sum()
                                : gw.middleRows(slice.begin, slice.end - slice.begin).sum();
        batch_sums[slice.block_id] += part;
    }
    for (const auto& [id, s] : batch_sums) {
        acc.block_scores[id] += acc.abs_per_batch ? std::abs(s) : s;
    }
    acc.step_count += 1;
}

std::map<std::string, double> first_order_block_importance(const ImportanceAccumulator& acc,
                                                           const BlockPartition& partition) {
    if (acc.step_count == 0) throw StateError("first-order importance read from an empty accumulator");
    std::map<std::string, double> out;
    for (const auto& id : partition.block_ids) {
        const auto it = acc.block_scores.find(id);
        const double v = it == acc.block_scores.end() ? 0.0 : it->second;
        out[id] = acc.abs_per_batch ? v : std::abs(v);
    }
    return out;
}

void movement_update(MaskedParameterSite& site, const Mat& grad_wrt_masked_weight,
                     double learning_rate_s) {
    if (grad_wrt_masked_weight.rows() != site.weight.rows() ||
        grad_wrt_masked_weight.cols() != site.weight.cols()) {
        throw StateError("movement_update shape mismatch at " + site.site_id);
    }
    site.score -= learning_rate_s * grad_wrt_masked_weight.cwiseProduct(site.weight);
}

void soft_movement_regularizer_update(MaskedParameterSite& site, double regularizer_weight,
                                      double learning_rate_s) {
    if (regularizer_weight == 0.0) return;
    site.score -= (learning_rate_s * regularizer_weight) *
                  site.score.unaryExpr([](double s) {
                      const double sig = 1.0 / (1.0 + std::exp(-s));
                      return sig * (1.0 - sig);
                  });
}

Mat magnitude_scores(const MaskedParameterSite& site) { return site.weight.cwiseAbs(); }

namespace {

std::int64_t kept_count(double sparsity_percent, std::int64_t count) {
    return static_cast<std::int64_t>(
        std::floor((1.0 - sparsity_percent / 100.0) * static_cast<double>(count)));
}

}  // namespace

Mat topk_mask(const Mat& scores, double target_sparsity_percent) {
    if (target_sparsity_percent < 0.0 || target_sparsity_percent >= 100.0) {
        throw ConfigError("topk sparsity must lie in [0, 100); a fully pruned site is disallowed");
    }
    const std::int64_t count = scores.size();
    const std::int64_t keep = kept_count(target_sparsity_percent, count);
    if (keep >= count) return Mat::Ones(scores.rows(), scores.cols());

    std::vector<std::int64_t> idx(static_cast<std::size_t>(count));
    std::iota(idx.begin(), idx.end(), 0);
    const double* data = scores.data();
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::int64_t a, std::int64_t b) { return data[a] > data[b]; });

    Mat mask = Mat::Zero(scores.rows(), scores.cols());
    for (std::int64_t i = 0; i < keep; ++i) mask.data()[idx[static_cast<std::size_t>(i)]] = 1.0;
    return mask;
}

ThresholdMaskResult threshold_mask(const Mat& scores, const ThresholdConfig& cfg) {
    cfg.validate();
    ThresholdMaskResult out;
    out.mask = (scores.array() > cfg.threshold).cast<double>().matrix();
    out.regularizer_value =
        cfg.regularizer_weight *
        scores.unaryExpr([](double s) { return 1.0 / (1.0 + std::exp(-s)); }).sum();
    out.degenerate = out.mask.sum() == 0.0;
    return out;
}

void apply_topk_masks(Model& model, double target_sparsity_percent, TopkScope scope) {
    auto sites = model.prunable_sites();
    if (scope == TopkScope::per_site) {
        for (auto* s : sites) s->mask = topk_mask(s->score, target_sparsity_percent);
        return;
    }
    if (target_sparsity_percent < 0.0 || target_sparsity_percent >= 100.0) {
        throw ConfigError("topk sparsity must lie in [0, 100)");
    }
    std::int64_t census = 0;
    for (const auto* s : sites) census += s->entry_count();
    const std::int64_t keep = kept_count(target_sparsity_percent, census);

    struct Ref {
        double score;
        std::size_t site;
        std::int64_t flat;
    };
    std::vector<Ref> refs;
    refs.reserve(static_cast<std::size_t>(census));
    for (std::size_t si = 0; si < sites.size(); ++si) {
        const double* data = sites[si]->score.data();
        for (std::int64_t f = 0; f < sites[si]->entry_count(); ++f) {
            refs.push_back({data[f], si, f});
        }
    }
    std::stable_sort(refs.begin(), refs.end(),
                     [](const Ref& a, const Ref& b) { return a.score > b.score; });
    for (auto* s : sites) s->mask.setZero();
    for (std::int64_t i = 0; i < keep; ++i) {
        const Ref& r = refs[static_cast<std::size_t>(i)];
        sites[r.site]->mask.data()[r.flat] = 1.0;
    }
}

StructuredPruneResult structured_prune_step(const std::map<std::string, double>& block_importances,
                                            const std::vector<std::string>& alive_blocks,
                                            double fraction, const Model& model,
                                            const BlockPartition& partition) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("prune fraction must lie in (0, 1)");
    if (alive_blocks.empty()) throw StateError("structured prune with no alive blocks");

    // Partition order is the deterministic tiebreak for equal importances.
    std::map<std::string, std::size_t> order;
    for (std::size_t i = 0; i < partition.block_ids.size(); ++i) order[partition.block_ids[i]] = i;

    std::vector<std::string> sorted = alive_blocks;
    std::sort(sorted.begin(), sorted.end(), [&](const std::string& a, const std::string& b) {
        const double ia = block_importances.at(a), ib = block_importances.at(b);
        if (ia != ib) return ia < ib;
        return order.at(a) < order.at(b);
    });

    std::map<int, int> alive_heads;
    for (const auto& id : alive_blocks) {
        if (is_head_block(id)) alive_heads[block_layer(id)] += 1;
    }

    const double target = fraction * static_cast<double>(prunable_census(model));
    StructuredPruneResult out;
    double cum = 0.0;
    bool any_candidate = false;
    for (const auto& id : sorted) {
        if (is_head_block(id) && alive_heads[block_layer(id)] <= 1) continue;  // last-head guard
        any_candidate = true;
        const double size = static_cast<double>(block_entry_count(model, partition, id));
        if (cum + size <= target) {
            out.removed.push_back(id);
            out.removed_entries += static_cast<std::int64_t>(size);
            cum += size;
            if (is_head_block(id)) alive_heads[block_layer(id)] -= 1;
            continue;
        }
        // Contested block: keep it only if overshooting lands closer.
        if ((cum + size - target) < (target - cum)) {
            out.removed.push_back(id);
            out.removed_entries += static_cast<std::int64_t>(size);
            if (is_head_block(id)) alive_heads[block_layer(id)] -= 1;
        }
        break;
    }
    if (!any_candidate) throw StateError("structured prune: nothing removable");
    return out;
}

std::uint64_t mask_digest(const Model& model) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto* s : model.prunable_sites()) h = hash_matrix(s->mask, h);
    return h;
}

}  // namespace cap
