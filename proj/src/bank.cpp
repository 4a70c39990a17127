// SPDX-License-Identifier: Apache-2.0

#include "cap/bank.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace cap {

namespace {
constexpr char kBankMagic[8] = {'C', 'A', 'P', 'B', 'A', 'N', 'K', '1'};
}

RepresentationBank encode_bank(const Model& frozen_model, const Dataset& examples,
                               SourceRole role, double source_sparsity,
                               std::int64_t created_at_step, int encode_batch_size) {
    if (examples.size() == 0) throw InputError("encode_bank: empty example list");
    RepresentationBank bank;
    bank.source_role = role;
    bank.source_sparsity = source_sparsity;
    bank.created_at_step = created_at_step;
    bank.dim = frozen_model.config.d_model;
    bank.example_indices.reserve(examples.size());
    bank.labels.reserve(examples.size());
    bank.vectors.reserve(examples.size() * static_cast<std::size_t>(bank.dim));

    for (const Batch& batch : sequential_batches(examples, encode_batch_size)) {
        const Mat pooled = encode(frozen_model, batch);
        for (int b = 0; b < batch.batch_size; ++b) {
            bank.example_indices.push_back(batch.example_indices[static_cast<std::size_t>(b)]);
            bank.labels.push_back(batch.labels[static_cast<std::size_t>(b)]);
            for (int j = 0; j < bank.dim; ++j) {
                bank.vectors.push_back(static_cast<float>(pooled(b, j)));
            }
        }
    }
    return bank;
}

FetchResult fetch(const RepresentationBank& bank, int n, Rng& rng,
                  const std::vector<std::int64_t>& include_indices) {
    if (n < 1) throw ConfigError("fetch: N must be at least 1");
    const std::int64_t size = bank.entry_count();
    const std::int64_t take = std::min<std::int64_t>(n, size);

    std::vector<std::int64_t> chosen;
    chosen.reserve(static_cast<std::size_t>(take));
    if (take == size) {
        for (std::int64_t i = 0; i < size; ++i) chosen.push_back(i);
    } else {
        std::unordered_map<std::int64_t, std::int64_t> by_example;
        by_example.reserve(bank.example_indices.size());
        for (std::int64_t i = 0; i < size; ++i) by_example.emplace(bank.example_indices[static_cast<std::size_t>(i)], i);

        std::unordered_set<std::int64_t> used;
        for (std::int64_t ex : include_indices) {
            if (static_cast<std::int64_t>(chosen.size()) >= take) break;
            const auto it = by_example.find(ex);
            if (it != by_example.end() && used.insert(it->second).second) {
                chosen.push_back(it->second);
            }
        }
        // Fill the remainder by sampling without replacement.
        std::vector<std::int64_t> pool;
        pool.reserve(static_cast<std::size_t>(size));
        for (std::int64_t i = 0; i < size; ++i) {
            if (!used.count(i)) pool.push_back(i);
        }
        std::shuffle(pool.begin(), pool.end(), rng);
        for (std::int64_t i : pool) {
            if (static_cast<std::int64_t>(chosen.size()) >= take) break;
            chosen.push_back(i);
        }
    }

    FetchResult out;
    out.source_role = bank.source_role;
    out.source_sparsity = bank.source_sparsity;
    out.view.vectors.resize(static_cast<Eigen::Index>(chosen.size()), bank.dim);
    out.view.meta.reserve(chosen.size());
    for (std::size_t r = 0; r < chosen.size(); ++r) {
        const std::int64_t i = chosen[r];
        const float* src = bank.vectors.data() + i * bank.dim;
        for (int j = 0; j < bank.dim; ++j) {
            out.view.vectors(static_cast<Eigen::Index>(r), j) = static_cast<double>(src[j]);
        }
        out.view.meta.push_back({bank.example_indices[static_cast<std::size_t>(i)],
                                 bank.labels[static_cast<std::size_t>(i)], bank.source_role,
                                 bank.source_sparsity});
    }
    bank.last_fetch_values = static_cast<std::int64_t>(chosen.size()) * bank.dim;
    bank.max_fetch_values = std::max(bank.max_fetch_values, bank.last_fetch_values);
    return out;
}

Footprint footprint(const RepresentationBank& bank) {
    return {bank.entry_count(), bank.entry_count() * bank.dim};
}

void save_bank(const RepresentationBank& bank, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RunError("cannot write bank file: " + path);
    out.write(kBankMagic, sizeof(kBankMagic));
    const std::uint32_t dim = static_cast<std::uint32_t>(bank.dim);
    const std::uint64_t count = static_cast<std::uint64_t>(bank.entry_count());
    out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    out.write(reinterpret_cast<const char*>(bank.vectors.data()),
              static_cast<std::streamsize>(bank.vectors.size() * sizeof(float)));
    if (!out) throw RunError("short write on bank file: " + path);

    nlohmann::ordered_json meta;
    meta["source_role"] = to_string(bank.source_role);
    meta["source_sparsity"] = bank.source_sparsity;
    meta["created_at_step"] = bank.created_at_step;
    meta["example_indices"] = bank.example_indices;
    meta["labels"] = bank.labels;
    std::ofstream side(path + ".json");
    if (!side) throw RunError("cannot write bank sidecar: " + path + ".json");
    side << meta.dump(2) << "\n";
}

RepresentationBank load_bank(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open bank file: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kBankMagic, sizeof(magic)) != 0) {
        throw InputError("not a bank file: " + path);
    }
    std::uint32_t dim = 0;
    std::uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&dim), sizeof(dim));
    in.read(reinterpret_cast<char*>(&count), sizeof(count));
    RepresentationBank bank;
    bank.dim = static_cast<int>(dim);
    bank.vectors.resize(count * dim);
    in.read(reinterpret_cast<char*>(bank.vectors.data()),
            static_cast<std::streamsize>(bank.vectors.size() * sizeof(float)));
    if (!in) throw InputError("truncated bank file: " + path);

    std::ifstream side(path + ".json");
    if (!side) throw InputError("missing bank sidecar: " + path + ".json");
    nlohmann::json meta = nlohmann::json::parse(side);
    bank.source_role = source_role_from_string(meta.at("source_role").get<std::string>());
    bank.source_sparsity = meta.at("source_sparsity").get<double>();
    bank.created_at_step = meta.at("created_at_step").get<std::int64_t>();
    bank.example_indices = meta.at("example_indices").get<std::vector<std::int64_t>>();
    bank.labels = meta.at("labels").get<std::vector<int>>();
    if (bank.entry_count() != static_cast<std::int64_t>(count)) {
        throw InputError("bank sidecar does not match payload: " + path);
    }
    return bank;
}

}  // namespace cap
