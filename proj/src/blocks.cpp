// SPDX-License-Identifier: Apache-2.0

#include "cap/blocks.hpp"

#include <algorithm>
#include <set>

namespace cap {

namespace {

std::string head_id(int layer, int h) {
    return "l" + std::to_string(layer) + ".head" + std::to_string(h);
}

std::string neuron_id(int layer, int j) {
    return "l" + std::to_string(layer) + ".ffn" + std::to_string(j);
}

}  // namespace

BlockPartition block_partition(const Model& model) {
    BlockPartition p;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& L = model.layers[l];
        const int layer = static_cast<int>(l);
        const std::string prefix = "layer" + std::to_string(layer) + ".";
        for (int h = 0; h < L.n_heads; ++h) {
            const std::string id = head_id(layer, h);
            p.block_ids.push_back(id);
            const int b = h * L.d_head, e = (h + 1) * L.d_head;
            p.slices.push_back({id, prefix + "attn.wq", SliceKind::cols, b, e});
            p.slices.push_back({id, prefix + "attn.wk", SliceKind::cols, b, e});
            p.slices.push_back({id, prefix + "attn.wv", SliceKind::cols, b, e});
            p.slices.push_back({id, prefix + "attn.wo", SliceKind::rows, b, e});
        }
        for (int j = 0; j < L.ffn_width(); ++j) {
            const std::string id = neuron_id(layer, j);
            p.block_ids.push_back(id);
            p.slices.push_back({id, prefix + "ffn.w1", SliceKind::cols, j, j + 1});
            p.slices.push_back({id, prefix + "ffn.w2", SliceKind::rows, j, j + 1});
        }
    }
    return p;
}

std::vector<BlockSlice> slices_of_block(const BlockPartition& p, const std::string& block_id) {
    std::vector<BlockSlice> out;
    for (const auto& s : p.slices) {
        if (s.block_id == block_id) out.push_back(s);
    }
    return out;
}

namespace {

MaskedParameterSite* find_site(Model& model, const std::string& site_id) {
    for (auto* s : model.prunable_sites()) {
        if (s->site_id == site_id) return s;
    }
    throw StateError("unknown site: " + site_id);
}

const MaskedParameterSite* find_site(const Model& model, const std::string& site_id) {
    return find_site(const_cast<Model&>(model), site_id);
}

}  // namespace

std::int64_t block_entry_count(const Model& model, const BlockPartition& p,
                               const std::string& block_id) {
    std::int64_t n = 0;
    for (const auto& s : p.slices) {
        if (s.block_id != block_id) continue;
        const auto* site = find_site(model, s.site_id);
        const Eigen::Index span = s.end - s.begin;
        n += (s.kind == SliceKind::cols) ? site->weight.rows() * span : span * site->weight.cols();
    }
    return n;
}

void mask_out_block(Model& model, const BlockPartition& p, const std::string& block_id) {
    for (const auto& s : p.slices) {
        if (s.block_id != block_id) continue;
        auto* site = find_site(model, s.site_id);
        if (s.kind == SliceKind::cols) {
            site->mask.middleCols(s.begin, s.end - s.begin).setZero();
        } else {
            site->mask.middleRows(s.begin, s.end - s.begin).setZero();
        }
    }
}

bool is_head_block(const std::string& block_id) {
    return block_id.find(".head") != std::string::npos;
}

int block_layer(const std::string& block_id) {
    return std::stoi(block_id.substr(1, block_id.find('.') - 1));
}

namespace {

Mat gather_cols(const Mat& m, const std::vector<int>& cols) {
    Mat out(m.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(cols[i]);
    return out;
}

Mat gather_rows(const Mat& m, const std::vector<int>& rows) {
    Mat out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
    return out;
}

void gather_site_cols(MaskedParameterSite& s, const std::vector<int>& cols) {
    s.weight = gather_cols(s.weight, cols);
    s.mask = gather_cols(s.mask, cols);
    s.score = gather_cols(s.score, cols);
    s.grad_eff = Mat::Zero(s.weight.rows(), s.weight.cols());
}

void gather_site_rows(MaskedParameterSite& s, const std::vector<int>& rows) {
    s.weight = gather_rows(s.weight, rows);
    s.mask = gather_rows(s.mask, rows);
    s.score = gather_rows(s.score, rows);
    s.grad_eff = Mat::Zero(s.weight.rows(), s.weight.cols());
}

}  // namespace

Model structurally_removed(const Model& model, const BlockPartition& p,
                           const std::vector<std::string>& removed_block_ids) {
    (void)p;
    const std::set<std::string> removed(removed_block_ids.begin(), removed_block_ids.end());
    Model out = model;
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
        auto& L = out.layers[l];
        const int layer = static_cast<int>(l);

        std::vector<int> kept_attn_cols;
        int kept_heads = 0;
        for (int h = 0; h < L.n_heads; ++h) {
            if (removed.count(head_id(layer, h))) continue;
            ++kept_heads;
            for (int c = h * L.d_head; c < (h + 1) * L.d_head; ++c) kept_attn_cols.push_back(c);
        }
        if (kept_heads != L.n_heads) {
            gather_site_cols(L.wq, kept_attn_cols);
            gather_site_cols(L.wk, kept_attn_cols);
            gather_site_cols(L.wv, kept_attn_cols);
            gather_site_rows(L.wo, kept_attn_cols);
            L.bq.value = gather_cols(L.bq.value, kept_attn_cols);
            L.bq.grad = Mat::Zero(1, L.bq.value.cols());
            L.bk.value = gather_cols(L.bk.value, kept_attn_cols);
            L.bk.grad = Mat::Zero(1, L.bk.value.cols());
            L.bv.value = gather_cols(L.bv.value, kept_attn_cols);
            L.bv.grad = Mat::Zero(1, L.bv.value.cols());
            L.n_heads = kept_heads;
        }

        std::vector<int> kept_neurons;
        for (int j = 0; j < L.ffn_width(); ++j) {
            if (!removed.count(neuron_id(layer, j))) kept_neurons.push_back(j);
        }
        if (static_cast<int>(kept_neurons.size()) != L.ffn_width()) {
            gather_site_cols(L.w1, kept_neurons);
            gather_site_rows(L.w2, kept_neurons);
            L.b1.value = gather_cols(L.b1.value, kept_neurons);
            L.b1.grad = Mat::Zero(1, L.b1.value.cols());
        }
    }
    return out;
}

}  // namespace cap
