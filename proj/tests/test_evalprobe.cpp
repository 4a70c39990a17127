// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>

#include "cap/evalprobe.hpp"
#include "cap/orchestrator.hpp"
#include "cap/pruners.hpp"

using namespace cap;

namespace fs = std::filesystem;

namespace {

ModelConfig probe_model() {
    ModelConfig m;
    m.vocab_size = 200;
    m.d_model = 32;
    m.n_layers = 2;
    m.n_heads = 4;
    m.d_ffn = 64;
    m.max_seq_len = 32;
    m.n_classes = 2;
    return m;
}

}  // namespace

TEST_CASE("score_predictions hand counts") {
    const EvalMetrics perfect = score_predictions({1, 0, 1}, {1, 0, 1}, 2);
    REQUIRE(perfect.accuracy == 1.0);

    // Confusion matrix: tp=1, fp=1, fn=1, tn=1.
    const EvalMetrics half = score_predictions({1, 1, 0, 0}, {1, 0, 1, 0}, 2);
    REQUIRE(half.accuracy == 0.5);
    REQUIRE(half.f1 == 0.5);

    // Single-class data with a matching constant predictor.
    const EvalMetrics degenerate = score_predictions({0, 0, 0}, {0, 0, 0}, 2);
    REQUIRE(degenerate.accuracy == 1.0);
    REQUIRE(degenerate.f1 == 1.0);

    // Positive class absent from labels but predicted.
    REQUIRE(score_predictions({1, 0}, {0, 0}, 2).f1 == 0.0);
}

TEST_CASE("evaluate is permutation-invariant and rejects empty datasets") {
    const auto s = generate_synthetic_task(SyntheticFamily::keyword, 96, 2, 9, 200, 32);
    Rng rng = make_rng(500, "eval.model");
    const Model model(probe_model(), rng);

    const EvalMetrics base = evaluate(model, s.train);
    Dataset shuffled = s.train;
    Rng prng = make_rng(501, "eval.perm");
    std::shuffle(shuffled.examples.begin(), shuffled.examples.end(), prng);
    const EvalMetrics perm = evaluate(model, shuffled);
    REQUIRE(base.accuracy == perm.accuracy);
    REQUIRE(base.f1 == perm.f1);

    REQUIRE_THROWS_AS(evaluate(model, Dataset{}), InputError);
}

TEST_CASE("measured sparsity accounting") {
    Rng rng = make_rng(502, "ms.model");
    Model model(probe_model(), rng);
    REQUIRE(measured_sparsity(model).global_percent == 0.0);

    SECTION("topk at r=90 per site is within one entry per site") {
        std::normal_distribution<double> nd(0.0, 1.0);
        for (auto* s : model.prunable_sites()) {
            for (Eigen::Index i = 0; i < s->score.size(); ++i) s->score.data()[i] = nd(rng);
        }
        apply_topk_masks(model, 90.0, TopkScope::per_site);
        for (const auto& site : measured_sparsity(model).sites) {
            const double ideal = 0.9 * static_cast<double>(site.total);
            REQUIRE(std::abs(static_cast<double>(site.zeros) - ideal) <= 1.0);
        }
    }

    SECTION("removing half the equal-size blocks is 50% within one block") {
        const BlockPartition p = block_partition(model);
        // 64 neuron blocks per layer, all of size 2*d_model; mask half of them.
        for (int l = 0; l < 2; ++l) {
            for (int j = 0; j < 32; ++j) {
                mask_out_block(model, p, "l" + std::to_string(l) + ".ffn" + std::to_string(j));
            }
        }
        const SparsityReport rep = measured_sparsity(model);
        // Half the FFN mass is half of the FFN share of the census.
        const double ffn_share = 100.0 * (2.0 * 64.0 * 32.0 * 2.0) / 16384.0;
        REQUIRE(rep.global_percent == Catch::Approx(ffn_share / 2).margin(1e-9));
    }
}

TEST_CASE("probe keeps the encoder frozen and behaves sanely at zero epochs") {
    const auto source = generate_synthetic_task(SyntheticFamily::keyword, 160, 2, 21, 200, 32);
    const auto target = generate_synthetic_task(SyntheticFamily::pair_agreement, 160, 2, 22, 200, 32);

    Rng rng = make_rng(503, "probe.model");
    const Model pre(probe_model(), rng);
    const Model fine = fine_tune_dense(pre, source.train, 6, 16, 1e-3, 3);
    const std::uint64_t digest = fine.weights_digest();

    SECTION("zero-epoch probes sit near chance over seeds") {
        double mean_abs_dev = 0.0;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const ProbeResult r = probe_transfer(fine, target.train, target.dev, 0, 1e-2, seed);
            mean_abs_dev += std::abs(r.metrics.accuracy - 0.5) / 5.0;
        }
        const double chance_half_width =
            std::sqrt(0.25 / static_cast<double>(target.dev.size()));
        REQUIRE(mean_abs_dev <= 3.0 * chance_half_width);
        REQUIRE(fine.weights_digest() == digest);
    }

    SECTION("own-task probing never beats joint fine-tuning on seed average") {
        double probe_mean = 0.0, fine_mean = 0.0;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const Model ft = fine_tune_dense(pre, source.train, 6, 16, 1e-3, seed);
            fine_mean += evaluate(ft, source.dev).accuracy / 5.0;
            probe_mean +=
                probe_transfer(ft, source.train, source.dev, 10, 1e-2, seed).metrics.accuracy /
                5.0;
        }
        REQUIRE(probe_mean <= fine_mean + 1e-9);
    }

    SECTION("probing an encoder checkpoint leaves its digest unchanged") {
        const ProbeResult r = probe_transfer(fine, target.train, target.dev, 10, 1e-2, 11);
        REQUIRE(fine.weights_digest() == digest);
        REQUIRE(r.metrics.count == static_cast<std::int64_t>(target.dev.size()));
    }
}

TEST_CASE("ablation runner wiring") {
    RunConfig base = parse_config("");
    base.method = Method::cap_m;
    base.model = probe_model();
    base.output_dir = (fs::temp_directory_path() / "cap_ablate_unit").string();
    fs::remove_all(base.output_dir);
    base.data.n_examples = 96;
    base.data.n_dev = 48;
    base.contrastive.bank_size = 24;
    base.train.batch_size = 12;
    base.train.pretrain_steps = 0;
    base.train.finetune_epochs = 1;
    base.train.eval_every = 0;
    base.train.warmup_steps = 2;
    base.train.ramp_steps = 10;
    base.train.cooldown_steps = 4;

    SECTION("empty toggle set is a single full run with zero delta") {
        const AblationTable t = run_ablation(base, {}, {50.0});
        REQUIRE(t.rows.size() == 1);
        REQUIRE(t.rows[0].variant == "full");
        REQUIRE(t.rows[0].delta == 0.0);
    }

    SECTION("toggles fan out with shared teachers") {
        const AblationTable t = run_ablation(base, {"-prc", "-sup"}, {50.0});
        REQUIRE(t.rows.size() == 3);
        REQUIRE(t.rows[1].variant == "-prc");
        REQUIRE(t.rows[2].variant == "-sup");
        const std::string csv = t.to_csv();
        REQUIRE(csv.find("variant,sparsity,accuracy,f1,delta") == 0);
        REQUIRE(csv.find("-prc") != std::string::npos);
    }
}
