// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "cap/data.hpp"

using namespace cap;

TEST_CASE("synthetic generation is deterministic and balanced") {
    const auto a = generate_synthetic_task(SyntheticFamily::pair_agreement, 1000, 2, 42, 200, 32);
    const auto b = generate_synthetic_task(SyntheticFamily::pair_agreement, 1000, 2, 42, 200, 32);
    REQUIRE(a.train.size() == 1000);
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        REQUIRE(a.train.examples[i].tokens == b.train.examples[i].tokens);
        REQUIRE(a.train.examples[i].label == b.train.examples[i].label);
    }

    int counts[2] = {0, 0};
    for (const auto& ex : a.train.examples) counts[ex.label]++;
    REQUIRE(counts[0] == 500);
    REQUIRE(counts[1] == 500);

    const auto c = generate_synthetic_task(SyntheticFamily::pair_agreement, 1000, 2, 43, 200, 32);
    bool any_diff = false;
    for (std::size_t i = 0; i < c.train.size() && !any_diff; ++i) {
        any_diff = c.train.examples[i].tokens != a.train.examples[i].tokens;
    }
    REQUIRE(any_diff);
}

TEST_CASE("keyword family labels follow the keyword by construction") {
    const auto s = generate_synthetic_task(SyntheticFamily::keyword, 300, 3, 7, 200, 32);
    for (const auto& ex : s.train.examples) {
        int found = -1;
        for (std::size_t t = 1; t < ex.tokens.size(); ++t) {
            const std::int32_t tk = ex.tokens[t];
            if (tk >= tok::kFirstContent && tk < tok::kFirstContent + 3) {
                found = tk - tok::kFirstContent;
            }
        }
        REQUIRE(found == ex.label);
    }
}

TEST_CASE("pair family label follows key-token agreement") {
    const auto s = generate_synthetic_task(SyntheticFamily::pair_agreement, 200, 2, 11, 200, 32);
    for (const auto& ex : s.train.examples) {
        std::size_t sep = 0;
        for (std::size_t t = 1; t < ex.tokens.size(); ++t) {
            if (ex.tokens[t] == tok::kSep) sep = t;
        }
        REQUIRE(sep > 0);
        // Exactly one key token (from the 8-token key set) per segment.
        auto key_of = [](auto begin, auto end) {
            std::int32_t key = -1;
            int seen = 0;
            for (auto it = begin; it != end; ++it) {
                if (*it >= tok::kFirstContent && *it < tok::kFirstContent + 4) {
                    key = *it;
                    ++seen;
                }
            }
            REQUIRE(seen == 1);
            return key;
        };
        const std::int32_t key_a = key_of(ex.tokens.begin() + 1,
                                          ex.tokens.begin() + static_cast<std::ptrdiff_t>(sep));
        const std::int32_t key_b =
            key_of(ex.tokens.begin() + static_cast<std::ptrdiff_t>(sep) + 1, ex.tokens.end());
        REQUIRE((key_a == key_b) == (ex.label == 1));
    }
}

TEST_CASE("prefix family rejects unrepresentable class counts") {
    REQUIRE_THROWS_AS(generate_synthetic_task(SyntheticFamily::prefix_pattern, 100, 40, 3, 64, 32),
                      ConfigError);
}

TEST_CASE("tsv loading, OOV mapping, and malformed input") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "cap_tsv_test";
    fs::create_directories(dir);
    {
        std::ofstream train(dir / "train.tsv");
        train << "the red fox\t0\n";
        train << "a blue whale\t1\n";
        train << "the blue fox\t0\n";
        std::ofstream dev(dir / "dev.tsv");
        dev << "the green fox\t0\n";
    }

    const TsvDatasets t = load_tsv_dataset((dir / "train.tsv").string(), (dir / "dev.tsv").string(), 16);
    REQUIRE(t.train.size() == 3);
    REQUIRE(t.dev.size() == 1);
    REQUIRE(t.train.n_classes == 2);

    // "green" never appears in train and must map to the unknown id.
    const auto& dev_tokens = t.dev.examples[0].tokens;
    REQUIRE(dev_tokens[0] == tok::kCls);
    REQUIRE(dev_tokens[1] == t.vocab.at("the"));
    REQUIRE(dev_tokens[2] == tok::kUnk);
    REQUIRE(dev_tokens[3] == t.vocab.at("fox"));

    {
        std::ofstream bad(dir / "bad.tsv");
        bad << "no tab here\n";
    }
    try {
        load_tsv_dataset((dir / "bad.tsv").string(), (dir / "dev.tsv").string(), 16);
        FAIL("expected InputError");
    } catch (const InputError& e) {
        REQUIRE(std::string(e.what()).find(":1:") != std::string::npos);
    }

    {
        std::ofstream bad(dir / "badlabel.tsv");
        bad << "fine line\t0\n";
        bad << "bad label\tx7\n";
    }
    try {
        load_tsv_dataset((dir / "badlabel.tsv").string(), (dir / "dev.tsv").string(), 16);
        FAIL("expected InputError");
    } catch (const InputError& e) {
        REQUIRE(std::string(e.what()).find(":2:") != std::string::npos);
    }

    fs::remove_all(dir);
}

TEST_CASE("batching pads to the batch maximum and keeps labels aligned") {
    const auto s = generate_synthetic_task(SyntheticFamily::keyword, 10, 2, 3, 100, 32);
    const auto batches = sequential_batches(s.train, 4);
    REQUIRE(batches.size() == 3);
    for (const auto& b : batches) {
        for (int i = 0; i < b.batch_size; ++i) {
            const auto& ex = s.train.examples[static_cast<std::size_t>(b.example_indices[static_cast<std::size_t>(i)])];
            REQUIRE(ex.label == b.labels[static_cast<std::size_t>(i)]);
            for (int t = 0; t < b.seq_len; ++t) {
                const auto at = static_cast<std::size_t>(i * b.seq_len + t);
                if (t < static_cast<int>(ex.tokens.size())) {
                    REQUIRE(b.ids[at] == ex.tokens[static_cast<std::size_t>(t)]);
                    REQUIRE(b.real[at] == 1);
                } else {
                    REQUIRE(b.ids[at] == tok::kPad);
                    REQUIRE(b.real[at] == 0);
                }
            }
        }
    }
}
