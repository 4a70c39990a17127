// SPDX-License-Identifier: Apache-2.0
//
// Encoder forward/backward checks: pooling semantics, census, block
// partition, mask/delete equivalence, and finite-difference gradients.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "cap/blocks.hpp"
#include "cap/model.hpp"

using namespace cap;

namespace {

ModelConfig tiny_config(int n_layers = 1, int d_model = 8, int n_heads = 2, int d_ffn = 16,
                        Pooling pooling = Pooling::cls) {
    ModelConfig c;
    c.vocab_size = 50;
    c.d_model = d_model;
    c.n_layers = n_layers;
    c.n_heads = n_heads;
    c.d_ffn = d_ffn;
    c.max_seq_len = 12;
    c.n_classes = 3;
    c.pooling = pooling;
    return c;
}

Batch batch_from_tokens(const std::vector<std::vector<std::int32_t>>& seqs,
                        const std::vector<int>& labels) {
    Dataset ds;
    ds.n_classes = 3;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        Example ex;
        ex.tokens = seqs[i];
        ex.label = labels[i];
        ex.index = static_cast<std::int64_t>(i);
        ds.examples.push_back(ex);
    }
    std::vector<std::size_t> order(seqs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    return make_batch(ds, order, 0, seqs.size());
}

Batch random_batch(int batch_size, int min_len, int max_len, int vocab_size, Rng& rng) {
    std::uniform_int_distribution<int> len_d(min_len, max_len);
    std::uniform_int_distribution<std::int32_t> tok_d(tok::kFirstContent, vocab_size - 1);
    std::uniform_int_distribution<int> lab_d(0, 2);
    std::vector<std::vector<std::int32_t>> seqs;
    std::vector<int> labels;
    for (int b = 0; b < batch_size; ++b) {
        std::vector<std::int32_t> s{tok::kCls};
        const int n = len_d(rng);
        for (int t = 0; t < n; ++t) s.push_back(tok_d(rng));
        seqs.push_back(s);
        labels.push_back(lab_d(rng));
    }
    return batch_from_tokens(seqs, labels);
}

double batch_ce(const Model& model, const Batch& batch) {
    const ForwardCache c = model.forward(batch);
    return cross_entropy_loss(model.logits(c.pooled), batch.labels);
}

// Analytic CE gradients for every parameter of `model`.
void run_ce_backward(Model& model, const Batch& batch) {
    model.zero_grads();
    const ForwardCache c = model.forward(batch);
    const Mat lg = model.logits(c.pooled);
    const Mat d_logits = cross_entropy_grad(lg, batch.labels);
    const Mat d_pooled = model.classifier_backward(c.pooled, d_logits);
    model.backward(c, model.pooled_to_hidden_grad(c, d_pooled));
}

}  // namespace

TEST_CASE("cls pooling picks position zero") {
    Rng rng = make_rng(7, "model");
    Model model(tiny_config(), rng);
    const Batch batch = batch_from_tokens({{tok::kCls, 6, 7, 8}, {tok::kCls, 9, 10}}, {0, 1});
    const ForwardCache c = model.forward(batch);
    for (int b = 0; b < batch.batch_size; ++b) {
        REQUIRE((c.pooled.row(b) - c.hidden.row(b * batch.seq_len)).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("mean pooling of identical hidden states returns that state") {
    Rng rng = make_rng(8, "model");
    Model model(tiny_config(1, 8, 2, 16, Pooling::mean), rng);
    // Same token everywhere and no positional signal makes every row identical.
    model.pos_emb.value.setZero();
    const Batch batch = batch_from_tokens({{9, 9, 9, 9, 9}}, {0});
    const ForwardCache c = model.forward(batch);
    for (int t = 0; t < batch.seq_len; ++t) {
        REQUIRE((c.hidden.row(t) - c.hidden.row(0)).cwiseAbs().maxCoeff() < 1e-12);
    }
    REQUIRE((c.pooled.row(0) - c.hidden.row(0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mean pooling averages exactly the non-padding hidden states") {
    Rng rng = make_rng(9, "model");
    Model model(tiny_config(2, 8, 2, 16, Pooling::mean), rng);
    // Second sequence is longer, so the first one is padded.
    const Batch batch = batch_from_tokens({{tok::kCls, 6, 7}, {tok::kCls, 9, 10, 11, 12}}, {0, 1});
    const ForwardCache c = model.forward(batch);
    for (int b = 0; b < batch.batch_size; ++b) {
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(8);
        int n = 0;
        for (int t = 0; t < batch.seq_len; ++t) {
            if (batch.real[static_cast<std::size_t>(b * batch.seq_len + t)]) {
                acc += c.hidden.row(b * batch.seq_len + t);
                ++n;
            }
        }
        acc /= n;
        REQUIRE((c.pooled.row(b) - acc).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("token id out of range is an input error") {
    Rng rng = make_rng(10, "model");
    Model model(tiny_config(), rng);
    const Batch batch = batch_from_tokens({{tok::kCls, 49, 50}}, {0});
    REQUIRE_THROWS_AS(model.forward(batch), InputError);
}

TEST_CASE("prunable census sums configured matrix shapes") {
    Rng rng = make_rng(11, "model");
    Model model(tiny_config(1, 8, 2, 16), rng);
    REQUIRE(prunable_census(model) == 4 * (8 * 8) + 2 * (8 * 16));

    Model no_layers(tiny_config(0, 8, 2, 16), rng);
    REQUIRE(prunable_census(no_layers) == 0);

    // Census counts sites, not nonzeros.
    model.layers[0].wq.mask.setZero();
    REQUIRE(prunable_census(model) == 4 * (8 * 8) + 2 * (8 * 16));
}

TEST_CASE("block partition covers heads and ffn neurons disjointly") {
    Rng rng = make_rng(12, "model");
    ModelConfig cfg = tiny_config(2, 8, 4, 32);
    Model model(cfg, rng);
    const BlockPartition p = block_partition(model);
    REQUIRE(p.block_ids.size() == 2 * 4 + 2 * 32);

    // Each prunable index of each site is owned by exactly one block.
    for (const auto* site : model.prunable_sites()) {
        Mat owners = Mat::Zero(site->weight.rows(), site->weight.cols());
        for (const auto& s : p.slices) {
            if (s.site_id != site->site_id) continue;
            if (s.kind == SliceKind::cols) {
                owners.middleCols(s.begin, s.end - s.begin).array() += 1.0;
            } else {
                owners.middleRows(s.begin, s.end - s.begin).array() += 1.0;
            }
        }
        REQUIRE(owners.minCoeff() == 1.0);
        REQUIRE(owners.maxCoeff() == 1.0);
    }
}

TEST_CASE("masking a block is output-equivalent to structural deletion") {
    Rng rng = make_rng(13, "model");
    Model model(tiny_config(2, 8, 2, 16), rng);
    const BlockPartition p = block_partition(model);
    const std::vector<std::string> removed{"l0.head1", "l1.ffn3", "l1.ffn7"};

    Model masked = model;
    for (const auto& id : removed) mask_out_block(masked, p, id);
    const Model shrunk = structurally_removed(model, p, removed);

    Rng brng = make_rng(14, "batch");
    for (int trial = 0; trial < 5; ++trial) {
        const Batch batch = random_batch(3, 2, 8, model.config.vocab_size, brng);
        const Mat a = masked.logits(masked.forward(batch).pooled);
        const Mat b = shrunk.logits(shrunk.forward(batch).pooled);
        REQUIRE((a - b).cwiseAbs().maxCoeff() < 1e-5);
    }
}

TEST_CASE("fully masked site behaves like a zero weight matrix") {
    Rng rng = make_rng(15, "model");
    Model masked(tiny_config(), rng);
    Model zeroed = masked;
    masked.layers[0].w1.mask.setZero();
    zeroed.layers[0].w1.weight.setZero();
    Rng brng = make_rng(16, "batch");
    const Batch batch = random_batch(2, 3, 6, masked.config.vocab_size, brng);
    const Mat a = masked.logits(masked.forward(batch).pooled);
    const Mat b = zeroed.logits(zeroed.forward(batch).pooled);
    REQUIRE((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("masked-out weights receive exactly zero gradient and do not affect the loss") {
    Rng rng = make_rng(17, "model");
    Model model(tiny_config(), rng);
    auto& site = model.layers[0].wv;
    site.mask(1, 2) = 0.0;
    site.mask(4, 5) = 0.0;

    Rng brng = make_rng(18, "batch");
    const Batch batch = random_batch(2, 3, 6, model.config.vocab_size, brng);
    run_ce_backward(model, batch);

    const Mat weight_grad = site.grad_eff.cwiseProduct(site.mask);
    REQUIRE(weight_grad(1, 2) == 0.0);
    REQUIRE(weight_grad(4, 5) == 0.0);

    // Forward is exactly indifferent to the raw value at a masked entry.
    const double base = batch_ce(model, batch);
    site.weight(1, 2) += 123.0;
    REQUIRE(batch_ce(model, batch) == base);
}

TEST_CASE("analytic gradients match central finite differences") {
    const double h = 1e-5;
    const double tol = 1e-5;
    for (Pooling pooling : {Pooling::cls, Pooling::mean}) {
        Rng rng = make_rng(pooling == Pooling::cls ? 19 : 20, "model");
        Model model(tiny_config(2, 8, 2, 12, pooling), rng);
        // A few masked entries so the masked path is exercised too.
        model.layers[0].wq.mask(0, 3) = 0.0;
        model.layers[1].w2.mask(5, 1) = 0.0;

        Rng brng = make_rng(21, "batch");
        const Batch batch = random_batch(3, 2, 7, model.config.vocab_size, brng);
        run_ce_backward(model, batch);

        Rng pick = make_rng(22, "pick");
        auto check = [&](Mat& value, const Mat& grad, const std::string& what) {
            std::uniform_int_distribution<Eigen::Index> rd(0, value.rows() - 1);
            std::uniform_int_distribution<Eigen::Index> cd(0, value.cols() - 1);
            for (int k = 0; k < 4; ++k) {
                const Eigen::Index r = rd(pick), c = cd(pick);
                const double saved = value(r, c);
                value(r, c) = saved + h;
                const double up = batch_ce(model, batch);
                value(r, c) = saved - h;
                const double dn = batch_ce(model, batch);
                value(r, c) = saved;
                const double fd = (up - dn) / (2 * h);
                const double an = grad(r, c);
                // Central differences carry ~1e-10 absolute noise at this h.
                const double bound = tol * std::max(std::abs(fd), std::abs(an)) + 1e-9;
                INFO(what << " (" << r << "," << c << ") fd=" << fd << " an=" << an);
                REQUIRE(std::abs(fd - an) < bound);
            }
        };

        for (auto* p : model.dense_params()) check(p->value, p->grad, p->name);
        for (auto* s : model.prunable_sites()) {
            // Weight gradient is the masked product gradient re-masked.
            const Mat wgrad = s->grad_eff.cwiseProduct(s->mask);
            check(s->weight, wgrad, s->site_id);
        }
    }
}
