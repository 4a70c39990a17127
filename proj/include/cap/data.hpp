// SPDX-License-Identifier: Apache-2.0
//
// Datasets: synthetic task families, TSV ingestion, and batching.

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cap/common.hpp"

namespace cap {

// Reserved token ids shared by every task family so transfer probing is
// meaningful across tasks.
namespace tok {
constexpr std::int32_t kPad = 0;
constexpr std::int32_t kCls = 1;
constexpr std::int32_t kSep = 2;
constexpr std::int32_t kUnk = 3;
constexpr std::int32_t kMask = 4;
constexpr std::int32_t kFirstContent = 5;
}  // namespace tok

struct Example {
    std::vector<std::int32_t> tokens;  // includes the leading CLS token
    int label = 0;
    std::int64_t index = 0;  // stable key used by unsupervised positive sets
};

struct Dataset {
    std::vector<Example> examples;
    int n_classes = 0;
    std::string task_name;

    std::size_t size() const { return examples.size(); }
};

enum class SyntheticFamily { keyword, pair_agreement, prefix_pattern };

std::string to_string(SyntheticFamily f);
SyntheticFamily synthetic_family_from_string(const std::string& s);

struct SyntheticSplits {
    Dataset train;
    Dataset dev;
};

// Deterministic under seed; class counts balanced within +/-1 in each split.
SyntheticSplits generate_synthetic_task(SyntheticFamily family, int n_examples, int n_classes,
                                        std::uint64_t seed, int vocab_size, int max_seq_len,
                                        int n_dev = -1);

struct TsvDatasets {
    Dataset train;
    Dataset dev;
    std::unordered_map<std::string, std::int32_t> vocab;  // token -> id
    int vocab_size = 0;                                   // reserved ids + learned tokens
};

// Lines are `text<TAB>label`. The vocabulary is built from the train split;
// dev tokens unseen in train map to the unknown id.
TsvDatasets load_tsv_dataset(const std::string& train_path, const std::string& dev_path,
                             int max_seq_len);

// A padded batch. Row-major token layout: ids[b * seq_len + t].
struct Batch {
    int batch_size = 0;
    int seq_len = 0;
    std::vector<std::int32_t> ids;
    std::vector<std::uint8_t> real;  // 1 for real tokens, 0 for padding
    std::vector<int> labels;
    std::vector<std::int64_t> example_indices;
};

Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& order, std::size_t begin,
                 std::size_t count);

// All examples of `ds` in index order, split into batches of `batch_size`.
std::vector<Batch> sequential_batches(const Dataset& ds, int batch_size);

// Epoch iterator with a seeded shuffle per epoch.
class BatchSampler {
public:
    BatchSampler(const Dataset& ds, int batch_size, Rng rng);

    Batch next();
    int batches_per_epoch() const { return batches_per_epoch_; }

private:
    const Dataset& ds_;
    int batch_size_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    int batches_per_epoch_ = 0;

    void reshuffle();
};

}  // namespace cap
