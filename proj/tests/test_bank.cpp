// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "cap/bank.hpp"

using namespace cap;

namespace {

ModelConfig bank_model_config() {
    ModelConfig c;
    c.vocab_size = 64;
    c.d_model = 16;
    c.n_layers = 1;
    c.n_heads = 2;
    c.d_ffn = 24;
    c.max_seq_len = 16;
    c.n_classes = 2;
    return c;
}

Dataset small_dataset(int n, Rng& rng) {
    Dataset ds;
    ds.n_classes = 2;
    std::uniform_int_distribution<std::int32_t> tok_d(tok::kFirstContent, 63);
    std::uniform_int_distribution<int> len_d(2, 9);
    for (int i = 0; i < n; ++i) {
        Example ex;
        ex.tokens.push_back(tok::kCls);
        const int len = len_d(rng);
        for (int t = 0; t < len; ++t) ex.tokens.push_back(tok_d(rng));
        ex.label = i % 2;
        ex.index = i;
        ds.examples.push_back(ex);
    }
    return ds;
}

}  // namespace

TEST_CASE("encode_bank produces one pooled entry per example, deterministically") {
    Rng mrng = make_rng(201, "bank.model");
    const Model model(bank_model_config(), mrng);
    Rng drng = make_rng(202, "bank.data");
    const Dataset ds = small_dataset(10, drng);

    const RepresentationBank bank = encode_bank(model, ds, SourceRole::pretrained, 0.0, 0);
    REQUIRE(bank.entry_count() == 10);
    REQUIRE(bank.dim == 16);
    REQUIRE(bank.vectors.size() == 10u * 16u);

    const RepresentationBank again = encode_bank(model, ds, SourceRole::pretrained, 0.0, 0);
    REQUIRE(bank.vectors == again.vectors);

    REQUIRE_THROWS_AS(encode_bank(model, Dataset{}, SourceRole::pretrained, 0.0, 0), InputError);
}

TEST_CASE("bank entries are batch-size independent") {
    Rng mrng = make_rng(203, "bank.model");
    const Model model(bank_model_config(), mrng);
    Rng drng = make_rng(204, "bank.data");
    const Dataset ds = small_dataset(7, drng);

    const RepresentationBank bank = encode_bank(model, ds, SourceRole::pretrained, 0.0, 0, 4);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        Dataset single;
        single.n_classes = 2;
        single.examples.push_back(ds.examples[i]);
        const Mat pooled = encode(model, sequential_batches(single, 1)[0]);
        for (int j = 0; j < bank.dim; ++j) {
            REQUIRE(std::abs(static_cast<double>(bank.vectors[i * 16 + static_cast<std::size_t>(j)]) -
                             pooled(0, j)) < 1e-5);
        }
    }
}

TEST_CASE("fetch honors inclusion, replay, and whole-bank cases") {
    Rng mrng = make_rng(205, "bank.model");
    const Model model(bank_model_config(), mrng);
    Rng drng = make_rng(206, "bank.data");
    const Dataset ds = small_dataset(32, drng);
    const RepresentationBank bank = encode_bank(model, ds, SourceRole::pretrained, 0.0, 0);

    SECTION("N >= bank size returns the whole bank in stable order") {
        Rng rng = make_rng(207, "fetch");
        const FetchResult r = fetch(bank, 32, rng);
        REQUIRE(r.view.meta.size() == 32);
        for (int i = 0; i < 32; ++i) {
            REQUIRE(r.view.meta[static_cast<std::size_t>(i)].example_index == i);
        }
    }

    SECTION("anchor batch entries are always present") {
        Rng rng = make_rng(208, "fetch");
        const FetchResult r = fetch(bank, 8, rng, {3, 9});
        REQUIRE(r.view.meta.size() == 8);
        bool has3 = false, has9 = false;
        for (const auto& m : r.view.meta) {
            has3 |= m.example_index == 3;
            has9 |= m.example_index == 9;
        }
        REQUIRE(has3);
        REQUIRE(has9);
    }

    SECTION("the same rng state replays the same fetch") {
        Rng a = make_rng(209, "fetch");
        Rng b = make_rng(209, "fetch");
        const FetchResult ra = fetch(bank, 8, a, {1});
        const FetchResult rb = fetch(bank, 8, b, {1});
        for (std::size_t i = 0; i < ra.view.meta.size(); ++i) {
            REQUIRE(ra.view.meta[i].example_index == rb.view.meta[i].example_index);
        }
    }

    SECTION("fetch working set is bounded by N times d") {
        Rng rng = make_rng(210, "fetch");
        (void)fetch(bank, 8, rng, {3, 9});
        REQUIRE(bank.last_fetch_values == 8 * 16);
        REQUIRE(bank.max_fetch_values <= 32 * 16);
    }
}

TEST_CASE("footprint accounting") {
    RepresentationBank bank;
    bank.dim = 768;
    bank.example_indices.resize(4096);
    bank.labels.resize(4096);
    REQUIRE(footprint(bank).value_count == 3145728);

    RepresentationBank empty;
    REQUIRE(footprint(empty).entry_count == 0);
    REQUIRE(footprint(empty).value_count == 0);

    RepresentationBank small;
    small.dim = 64;
    small.example_indices.resize(100);
    small.labels.resize(100);
    REQUIRE(footprint(small).value_count == 6400);
}

TEST_CASE("bank serialization round trip") {
    Rng mrng = make_rng(211, "bank.model");
    const Model model(bank_model_config(), mrng);
    Rng drng = make_rng(212, "bank.data");
    const Dataset ds = small_dataset(12, drng);
    RepresentationBank bank = encode_bank(model, ds, SourceRole::snapshot, 40.0, 123);

    const std::string path =
        (std::filesystem::temp_directory_path() / "cap_test_bank.bin").string();
    save_bank(bank, path);
    const RepresentationBank loaded = load_bank(path);
    REQUIRE(loaded.source_role == SourceRole::snapshot);
    REQUIRE(loaded.source_sparsity == 40.0);
    REQUIRE(loaded.created_at_step == 123);
    REQUIRE(loaded.vectors == bank.vectors);
    REQUIRE(loaded.example_indices == bank.example_indices);
    REQUIRE(loaded.labels == bank.labels);
    std::filesystem::remove(path);
    std::filesystem::remove(path + ".json");
}
