// SPDX-License-Identifier: Apache-2.0

#include "cap/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

namespace cap {

std::string to_string(SyntheticFamily f) {
    switch (f) {
        case SyntheticFamily::keyword: return "keyword";
        case SyntheticFamily::pair_agreement: return "pair_agreement";
        case SyntheticFamily::prefix_pattern: return "prefix_pattern";
    }
    return "?";
}

SyntheticFamily synthetic_family_from_string(const std::string& s) {
    if (s == "keyword") return SyntheticFamily::keyword;
    if (s == "pair_agreement") return SyntheticFamily::pair_agreement;
    if (s == "prefix_pattern") return SyntheticFamily::prefix_pattern;
    throw ConfigError("unknown synthetic family: " + s);
}

namespace {

// Balanced label sequence (counts within +/-1), shuffled deterministically.
std::vector<int> balanced_labels(int n, int n_classes, Rng& rng) {
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = i % n_classes;
    std::shuffle(labels.begin(), labels.end(), rng);
    return labels;
}

std::int32_t sample_token(Rng& rng, std::int32_t lo, std::int32_t hi) {
    std::uniform_int_distribution<std::int32_t> d(lo, hi - 1);
    return d(rng);
}

int sample_len(Rng& rng, int lo, int hi) {
    std::uniform_int_distribution<int> d(lo, hi);
    return d(rng);
}

Example make_keyword_example(int label, std::int64_t index, Rng& rng, int n_classes,
                             int vocab_size, int max_seq_len) {
    // Class-k keyword is token kFirstContent + k; fillers avoid all keywords.
    const std::int32_t filler_lo = tok::kFirstContent + n_classes;
    const int body_len = std::min(sample_len(rng, 6, 14), max_seq_len - 1);
    Example ex;
    ex.label = label;
    ex.index = index;
    ex.tokens.push_back(tok::kCls);
    for (int t = 0; t < body_len; ++t) ex.tokens.push_back(sample_token(rng, filler_lo, vocab_size));
    std::uniform_int_distribution<int> pos(1, body_len);
    ex.tokens[static_cast<std::size_t>(pos(rng))] = tok::kFirstContent + label;
    return ex;
}

constexpr int kPairKeyCount = 4;
constexpr int kPairSegLen = 4;

std::int32_t pair_key_of_segment(const std::vector<std::int32_t>& seg) {
    for (std::int32_t t : seg) {
        if (t >= tok::kFirstContent && t < tok::kFirstContent + kPairKeyCount) return t;
    }
    return -1;
}

Example make_pair_example(int label, std::int64_t index, Rng& rng, int vocab_size,
                          int max_seq_len) {
    // CLS a1..am SEP b1..bm. Each segment carries exactly one key token from a
    // small key set at a random position; label 1 iff both keys agree.
    const int seg_len = std::min(kPairSegLen, std::max(2, (max_seq_len - 2) / 2));
    const std::int32_t filler_lo = tok::kFirstContent + kPairKeyCount;

    auto make_segment = [&](std::int32_t key) {
        std::vector<std::int32_t> seg(static_cast<std::size_t>(seg_len));
        for (auto& t : seg) t = sample_token(rng, filler_lo, vocab_size);
        std::uniform_int_distribution<int> pos(0, seg_len - 1);
        seg[static_cast<std::size_t>(pos(rng))] = key;
        return seg;
    };

    const std::int32_t key_a =
        tok::kFirstContent + sample_token(rng, 0, kPairKeyCount);
    std::int32_t key_b = key_a;
    if (label == 0) {
        while (key_b == key_a) key_b = tok::kFirstContent + sample_token(rng, 0, kPairKeyCount);
    }
    const std::vector<std::int32_t> a = make_segment(key_a);
    const std::vector<std::int32_t> b = make_segment(key_b);

    Example ex;
    ex.label = label;
    ex.index = index;
    ex.tokens.push_back(tok::kCls);
    ex.tokens.insert(ex.tokens.end(), a.begin(), a.end());
    ex.tokens.push_back(tok::kSep);
    ex.tokens.insert(ex.tokens.end(), b.begin(), b.end());
    return ex;
}

Example make_prefix_example(int label, std::int64_t index, Rng& rng, int n_classes,
                            int vocab_size, int max_seq_len) {
    // Class-k prefix is the token pair (kFirstContent+k, kFirstContent+n_classes+k).
    const std::int32_t filler_lo = tok::kFirstContent + 2 * n_classes;
    const int body_len = std::min(sample_len(rng, 6, 14), max_seq_len - 1);
    Example ex;
    ex.label = label;
    ex.index = index;
    ex.tokens.push_back(tok::kCls);
    ex.tokens.push_back(tok::kFirstContent + label);
    ex.tokens.push_back(tok::kFirstContent + n_classes + label);
    for (int t = 2; t < body_len; ++t) ex.tokens.push_back(sample_token(rng, filler_lo, vocab_size));
    return ex;
}

Dataset generate_split(SyntheticFamily family, int n, int n_classes, Rng& rng, int vocab_size,
                       int max_seq_len, std::int64_t index_base) {
    Dataset ds;
    ds.n_classes = n_classes;
    ds.task_name = to_string(family);
    const std::vector<int> labels = balanced_labels(n, n_classes, rng);
    ds.examples.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const std::int64_t index = index_base + i;
        switch (family) {
            case SyntheticFamily::keyword:
                ds.examples.push_back(make_keyword_example(labels[static_cast<std::size_t>(i)],
                                                           index, rng, n_classes, vocab_size,
                                                           max_seq_len));
                break;
            case SyntheticFamily::pair_agreement:
                ds.examples.push_back(make_pair_example(labels[static_cast<std::size_t>(i)], index,
                                                        rng, vocab_size, max_seq_len));
                break;
            case SyntheticFamily::prefix_pattern:
                ds.examples.push_back(make_prefix_example(labels[static_cast<std::size_t>(i)],
                                                          index, rng, n_classes, vocab_size,
                                                          max_seq_len));
                break;
        }
    }
    return ds;
}

}  // namespace

SyntheticSplits generate_synthetic_task(SyntheticFamily family, int n_examples, int n_classes,
                                        std::uint64_t seed, int vocab_size, int max_seq_len,
                                        int n_dev) {
    if (n_examples <= 0) throw ConfigError("n_examples must be positive");
    if (n_classes < 2) throw ConfigError("n_classes must be at least 2");
    if (family == SyntheticFamily::pair_agreement && n_classes != 2) {
        throw ConfigError("pair_agreement is a binary task");
    }
    const int reserved = (family == SyntheticFamily::prefix_pattern) ? 2 * n_classes : n_classes;
    if (tok::kFirstContent + reserved + 8 > vocab_size) {
        throw ConfigError("n_classes exceeds the patterns representable in this vocabulary");
    }
    if (n_dev < 0) n_dev = std::max(64, n_examples / 4);

    Rng rng = make_rng(seed, "synthetic." + to_string(family));
    SyntheticSplits out;
    out.train = generate_split(family, n_examples, n_classes, rng, vocab_size, max_seq_len, 0);
    out.dev = generate_split(family, n_dev, n_classes, rng, vocab_size, max_seq_len, n_examples);
    return out;
}

namespace {

std::vector<std::string> whitespace_tokens(const std::string& text) {
    std::vector<std::string> toks;
    std::istringstream ss(text);
    std::string t;
    while (ss >> t) toks.push_back(t);
    return toks;
}

struct RawTsv {
    std::vector<std::pair<std::string, int>> rows;
};

RawTsv read_tsv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open dataset file: " + path);
    RawTsv out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw InputError(path + ":" + std::to_string(line_no) + ": missing tab separator");
        }
        const std::string text = line.substr(0, tab);
        const std::string label_str = line.substr(tab + 1);
        int label = 0;
        try {
            std::size_t used = 0;
            label = std::stoi(label_str, &used);
            if (used != label_str.size()) throw std::invalid_argument("trailing chars");
        } catch (const std::exception&) {
            throw InputError(path + ":" + std::to_string(line_no) + ": label is not an integer: '" +
                             label_str + "'");
        }
        if (label < 0) {
            throw InputError(path + ":" + std::to_string(line_no) + ": negative label");
        }
        out.rows.emplace_back(text, label);
    }
    return out;
}

}  // namespace

TsvDatasets load_tsv_dataset(const std::string& train_path, const std::string& dev_path,
                             int max_seq_len) {
    const RawTsv train_raw = read_tsv(train_path);
    const RawTsv dev_raw = read_tsv(dev_path);
    if (train_raw.rows.empty()) throw InputError("train split is empty: " + train_path);

    TsvDatasets out;
    std::int32_t next_id = tok::kFirstContent;
    auto map_token = [&](const std::string& t, bool allow_new) {
        auto it = out.vocab.find(t);
        if (it != out.vocab.end()) return it->second;
        if (!allow_new) return tok::kUnk;
        out.vocab.emplace(t, next_id);
        return next_id++;
    };

    auto build = [&](const RawTsv& raw, bool allow_new, std::int64_t index_base) {
        Dataset ds;
        int max_label = 0;
        std::int64_t idx = index_base;
        for (const auto& [text, label] : raw.rows) {
            Example ex;
            ex.label = label;
            ex.index = idx++;
            ex.tokens.push_back(tok::kCls);
            for (const auto& t : whitespace_tokens(text)) {
                if (static_cast<int>(ex.tokens.size()) >= max_seq_len) break;
                ex.tokens.push_back(map_token(t, allow_new));
            }
            max_label = std::max(max_label, label);
            ds.examples.push_back(std::move(ex));
        }
        ds.n_classes = max_label + 1;
        return ds;
    };

    out.train = build(train_raw, true, 0);
    out.dev = build(dev_raw, false, static_cast<std::int64_t>(train_raw.rows.size()));
    out.train.task_name = train_path;
    out.dev.task_name = dev_path;
    const int n_classes = std::max(out.train.n_classes, out.dev.n_classes);
    out.train.n_classes = n_classes;
    out.dev.n_classes = n_classes;
    out.vocab_size = next_id;
    return out;
}

Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& order, std::size_t begin,
                 std::size_t count) {
    Batch b;
    b.batch_size = static_cast<int>(count);
    int max_len = 1;
    for (std::size_t i = 0; i < count; ++i) {
        const auto& ex = ds.examples[order[begin + i]];
        max_len = std::max(max_len, static_cast<int>(ex.tokens.size()));
    }
    b.seq_len = max_len;
    b.ids.assign(count * static_cast<std::size_t>(max_len), tok::kPad);
    b.real.assign(count * static_cast<std::size_t>(max_len), 0);
    b.labels.resize(count);
    b.example_indices.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto& ex = ds.examples[order[begin + i]];
        for (std::size_t t = 0; t < ex.tokens.size(); ++t) {
            b.ids[i * static_cast<std::size_t>(max_len) + t] = ex.tokens[t];
            b.real[i * static_cast<std::size_t>(max_len) + t] = 1;
        }
        b.labels[i] = ex.label;
        b.example_indices[i] = ex.index;
    }
    return b;
}

std::vector<Batch> sequential_batches(const Dataset& ds, int batch_size) {
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<Batch> out;
    for (std::size_t at = 0; at < ds.size(); at += static_cast<std::size_t>(batch_size)) {
        const std::size_t n = std::min(static_cast<std::size_t>(batch_size), ds.size() - at);
        out.push_back(make_batch(ds, order, at, n));
    }
    return out;
}

BatchSampler::BatchSampler(const Dataset& ds, int batch_size, Rng rng)
    : ds_(ds), batch_size_(batch_size), rng_(rng) {
    if (ds.size() == 0) throw InputError("cannot sample batches from an empty dataset");
    order_.resize(ds.size());
    std::iota(order_.begin(), order_.end(), 0);
    batches_per_epoch_ = static_cast<int>((ds.size() + static_cast<std::size_t>(batch_size) - 1) /
                                          static_cast<std::size_t>(batch_size));
    reshuffle();
}

void BatchSampler::reshuffle() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
}

Batch BatchSampler::next() {
    if (cursor_ >= ds_.size()) reshuffle();
    const std::size_t n = std::min(static_cast<std::size_t>(batch_size_), ds_.size() - cursor_);
    Batch b = make_batch(ds_, order_, cursor_, n);
    cursor_ += n;
    return b;
}

}  // namespace cap
