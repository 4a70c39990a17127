// SPDX-License-Identifier: Apache-2.0

#include "cap/contrastive.hpp"

#include <cmath>

namespace cap {

std::string to_string(SourceRole r) {
    switch (r) {
        case SourceRole::pretrained: return "pretrained";
        case SourceRole::finetuned: return "finetuned";
        case SourceRole::snapshot: return "snapshot";
        case SourceRole::pruned: return "pruned";
    }
    return "?";
}

SourceRole source_role_from_string(const std::string& s) {
    if (s == "pretrained") return SourceRole::pretrained;
    if (s == "finetuned") return SourceRole::finetuned;
    if (s == "snapshot") return SourceRole::snapshot;
    if (s == "pruned") return SourceRole::pruned;
    throw ConfigError("unknown source role: " + s);
}

std::string to_string(ContrastModule m) {
    switch (m) {
        case ContrastModule::prc: return "prc";
        case ContrastModule::snc: return "snc";
        case ContrastModule::fic: return "fic";
    }
    return "?";
}

ContrastModule contrast_module_from_string(const std::string& s) {
    if (s == "prc") return ContrastModule::prc;
    if (s == "snc") return ContrastModule::snc;
    if (s == "fic") return ContrastModule::fic;
    throw ConfigError("unknown contrastive module: " + s);
}

bool ContrastiveConfig::module_enabled(ContrastModule m) const {
    switch (m) {
        case ContrastModule::prc: return prc;
        case ContrastModule::snc: return snc;
        case ContrastModule::fic: return fic;
    }
    return false;
}

void ContrastiveConfig::validate() const {
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (bank_size < 1) throw ConfigError("bank_size must be at least 1");
}

double cosine_similarity(const Vec& a, const Vec& b) {
    const double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) {
        throw NumericalError("cosine similarity of a zero vector");
    }
    return a.dot(b) / (na * nb);
}

namespace {

struct Similarities {
    Vec s;       // cosine similarities, length N
    Mat v_unit;  // entry directions, N x d
    Vec u;       // anchor direction
    double anchor_norm = 0.0;
};

Similarities compute_similarities(const Vec& anchor, const Mat& entries) {
    const Eigen::Index n = entries.rows();
    if (n < 1) throw StateError("info_nce needs at least one bank entry");
    Similarities out;
    out.anchor_norm = anchor.norm();
    if (out.anchor_norm == 0.0) throw NumericalError("info_nce anchor is a zero vector");
    out.u = anchor / out.anchor_norm;
    out.v_unit.resize(n, entries.cols());
    out.s.resize(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const double norm = entries.row(k).norm();
        if (norm == 0.0) throw NumericalError("info_nce bank entry is a zero vector");
        out.v_unit.row(k) = entries.row(k) / norm;
        out.s(k) = out.v_unit.row(k).dot(out.u);
    }
    return out;
}

// Softmax over s/tau plus the mean positive log-probability.
struct NceCore {
    Vec p;
    double loss = 0.0;
};

NceCore nce_core(const Vec& s, const PositiveSet& positives, double tau) {
    if (!(tau > 0.0)) throw ConfigError("info_nce temperature must be positive");
    if (positives.empty()) throw StateError("info_nce called with an empty positive set");
    const Eigen::Index n = s.size();
    NceCore out;
    const Vec logits = s / tau;
    const double m = logits.maxCoeff();
    out.p = (logits.array() - m).exp();
    const double z = out.p.sum();
    out.p /= z;
    const double lse = m + std::log(z);
    double acc = 0.0;
    for (int j : positives.positive_indices) {
        if (j < 0 || j >= n) throw StateError("positive index out of range");
        acc += logits(j) - lse;
    }
    out.loss = -acc / static_cast<double>(positives.positive_indices.size());
    return out;
}

}  // namespace

double info_nce(const Vec& anchor, const Mat& entries, const PositiveSet& positives, double tau) {
    const Similarities sim = compute_similarities(anchor, entries);
    return nce_core(sim.s, positives, tau).loss;
}

InfoNceGrad info_nce_with_grad(const Vec& anchor, const Mat& entries, const PositiveSet& positives,
                               double tau) {
    const Similarities sim = compute_similarities(anchor, entries);
    const NceCore core = nce_core(sim.s, positives, tau);

    const Eigen::Index n = entries.rows();
    Vec coef = core.p / tau;
    const double w = 1.0 / (tau * static_cast<double>(positives.positive_indices.size()));
    for (int j : positives.positive_indices) coef(j) -= w;

    // d s_k / d anchor = (v_k - s_k * u) / ||anchor||
    InfoNceGrad out;
    out.loss = core.loss;
    out.d_anchor = Vec::Zero(anchor.size());
    for (Eigen::Index k = 0; k < n; ++k) {
        out.d_anchor += coef(k) * (sim.v_unit.row(k).transpose() - sim.s(k) * sim.u);
    }
    out.d_anchor /= sim.anchor_norm;
    return out;
}

PositiveSet build_positive_set(ContrastModule module, ContrastMode mode,
                               std::int64_t anchor_example_index, int anchor_label,
                               const std::vector<BankEntryMeta>& bank_metadata,
                               double anchor_sparsity) {
    PositiveSet out;
    out.module = module;
    out.mode = mode;
    const SourceRole wanted = module == ContrastModule::prc   ? SourceRole::pretrained
                              : module == ContrastModule::fic ? SourceRole::finetuned
                                                              : SourceRole::snapshot;
    for (std::size_t k = 0; k < bank_metadata.size(); ++k) {
        const auto& e = bank_metadata[k];
        if (e.role != wanted) continue;
        if (module == ContrastModule::snc && !(e.sparsity < anchor_sparsity)) continue;
        const bool match = (mode == ContrastMode::unsup) ? e.example_index == anchor_example_index
                                                         : e.label == anchor_label;
        if (match) out.positive_indices.push_back(static_cast<int>(k));
    }
    return out;
}

FetchedView pool_views(const std::vector<FetchedView>& views) {
    FetchedView out;
    Eigen::Index total = 0;
    for (const auto& v : views) total += v.vectors.rows();
    if (total == 0) return out;
    out.vectors.resize(total, views.front().vectors.cols());
    Eigen::Index at = 0;
    for (const auto& v : views) {
        out.vectors.middleRows(at, v.vectors.rows()) = v.vectors;
        out.meta.insert(out.meta.end(), v.meta.begin(), v.meta.end());
        at += v.vectors.rows();
    }
    return out;
}

ModuleLossResult module_loss(ContrastModule module, const Mat& anchors,
                             const std::vector<std::int64_t>& anchor_indices,
                             const std::vector<int>& anchor_labels,
                             const std::vector<FetchedView>& views,
                             const ContrastiveConfig& config, double anchor_sparsity,
                             bool with_grad) {
    ModuleLossResult out;
    out.d_anchors = Mat::Zero(anchors.rows(), anchors.cols());
    if (!config.module_enabled(module)) return out;
    if (views.empty()) return out;
    if (!config.sup_enabled && !config.unsup_enabled) return out;

    const Eigen::Index n_anchors = anchors.rows();
    const double view_w = 1.0 / static_cast<double>(views.size());

    for (const auto& view : views) {
        for (ContrastMode mode : {ContrastMode::unsup, ContrastMode::sup}) {
            if (mode == ContrastMode::unsup && !config.unsup_enabled) continue;
            if (mode == ContrastMode::sup && !config.sup_enabled) continue;

            std::vector<std::pair<int, PositiveSet>> contributing;
            for (Eigen::Index i = 0; i < n_anchors; ++i) {
                PositiveSet ps = build_positive_set(
                    module, mode, anchor_indices[static_cast<std::size_t>(i)],
                    anchor_labels[static_cast<std::size_t>(i)], view.meta, anchor_sparsity);
                ps.anchor_index = static_cast<int>(i);
                if (!ps.empty()) contributing.emplace_back(static_cast<int>(i), std::move(ps));
            }
            if (contributing.empty()) continue;

            const double anchor_w = view_w / static_cast<double>(contributing.size());
            for (const auto& [i, ps] : contributing) {
                const Vec anchor = anchors.row(i).transpose();
                if (with_grad) {
                    const InfoNceGrad g =
                        info_nce_with_grad(anchor, view.vectors, ps, config.temperature);
                    out.loss += anchor_w * g.loss;
                    out.d_anchors.row(i) += anchor_w * g.d_anchor.transpose();
                } else {
                    out.loss += anchor_w * info_nce(anchor, view.vectors, ps, config.temperature);
                }
            }
        }
    }
    return out;
}

}  // namespace cap
