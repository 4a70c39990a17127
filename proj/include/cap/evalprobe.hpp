// SPDX-License-Identifier: Apache-2.0
//
// Evaluation metrics, sparsity verification, frozen-encoder linear probing,
// the ablation runner, and report rendering.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cap/config.hpp"
#include "cap/data.hpp"
#include "cap/model.hpp"

namespace cap {

struct EvalMetrics {
    double accuracy = 0.0;
    double f1 = 0.0;       // positive class, binary tasks only
    bool has_f1 = false;
    std::int64_t count = 0;
};

// Accuracy over all classes; F1 on the positive class for binary tasks. When
// the positive class is absent from both predictions and labels F1 is 1.0,
// absent from exactly one it is 0.0.
EvalMetrics score_predictions(const std::vector<int>& predictions, const std::vector<int>& labels,
                              int n_classes);

EvalMetrics evaluate(const Model& model, const Dataset& dataset, int batch_size = 64);

struct SiteSparsity {
    std::string site_id;
    std::int64_t total = 0;
    std::int64_t zeros = 0;
    double percent = 0.0;
};

struct SparsityReport {
    std::int64_t census = 0;
    std::int64_t zeros = 0;
    double global_percent = 0.0;
    std::vector<SiteSparsity> sites;
};

SparsityReport measured_sparsity(const Model& model);

struct ProbeResult {
    std::string source_task;
    std::string target_task;
    double sparsity = 0.0;
    std::string method;
    double score = 0.0;
    double baseline_score = 0.0;
    double delta = 0.0;
    EvalMetrics metrics;
};

// Trains a fresh linear classifier on the frozen encoder's pooled
// representations (full-batch gradient descent) and evaluates on the target
// dev split. The encoder is never touched; mutation is detected by digest.
ProbeResult probe_transfer(const Model& pruned_model, const Dataset& target_train,
                           const Dataset& target_dev, int probe_epochs, double lr,
                           std::uint64_t seed);

// F1 for binary pair tasks, accuracy otherwise.
double task_score(const EvalMetrics& m, const std::string& task_name);

struct AblationRow {
    std::string variant;  // "full", "-prc", "-snc", "-fic", "-sup", "-unsup", "-kd"
    double sparsity = 0.0;
    EvalMetrics metrics;
    double delta = 0.0;  // mean over reported scores vs the full run
    std::string run_dir;
};

struct AblationTable {
    std::vector<AblationRow> rows;
    std::uint64_t pretrained_digest = 0;  // identical across every variant
    std::uint64_t finetuned_digest = 0;

    std::string to_csv() const;
};

// One run per (variant x sparsity) with shared seeds; deltas are average
// score reductions against the full run at the same sparsity. Teachers must
// come out byte-identical across variants.
AblationTable run_ablation(const RunConfig& base_config, const std::vector<std::string>& toggles,
                           const std::vector<double>& sparsities);

// Renders score-vs-sparsity comparison artifacts from stored run summaries.
void write_report(const std::vector<std::string>& run_dirs, const std::string& csv_path,
                  const std::string& svg_path);

}  // namespace cap
