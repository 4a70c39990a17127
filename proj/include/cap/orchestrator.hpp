// SPDX-License-Identifier: Apache-2.0
//
// The full pipeline: pre-train (or load) the dense encoder, fine-tune the
// teacher, then iteratively prune-and-train with the combined objective
// lambda_ce*CE + lambda_prc*PrC + lambda_snc*SnC + lambda_fic*FiC (+ optional
// knowledge distillation and the soft-movement regularizer), capturing
// snapshots and their banks along the way.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cap/bank.hpp"
#include "cap/config.hpp"
#include "cap/metrics.hpp"
#include "cap/model.hpp"

namespace cap {

struct SnapshotRecord {
    double sparsity = 0.0;
    std::int64_t step = 0;
    std::string checkpoint_dir;  // empty when snapshot weights were dropped
    std::string bank_path;       // empty when SnC is disabled
};

class SnapshotRegistry {
public:
    void add(SnapshotRecord record);
    const std::vector<SnapshotRecord>& records() const { return records_; }

    // Snapshots usable by SnC at the given model sparsity (r' < r).
    std::vector<const SnapshotRecord*> usable_below(double sparsity) const;

    void save_manifest(const std::string& path) const;

private:
    std::vector<SnapshotRecord> records_;
};

// T^2-scaled KL(teacher || student) on temperature-softened logits, averaged
// over the batch.
double kd_loss(const Mat& student_logits, const Mat& teacher_logits, double temperature);
Mat kd_loss_grad(const Mat& student_logits, const Mat& teacher_logits, double temperature);

// Short masked-token-prediction pass that gives the encoder general-purpose
// representations before any task fine-tuning.
void pretrain_encoder(Model& model, const Dataset& corpus, int steps, int batch_size, double lr,
                      std::uint64_t seed);

// Returns a fine-tuned copy; the input model is never modified. The classifier
// head is freshly initialized even for zero epochs.
Model fine_tune_dense(const Model& pretrained_model, const Dataset& task_data, int epochs,
                      int batch_size, double lr, std::uint64_t seed);

struct LossTerms {
    double total = 0.0;
    double ce = 0.0;
    double prc = 0.0;
    double snc = 0.0;
    double fic = 0.0;
    double kd = 0.0;
    double regularizer = 0.0;
};

struct ContrastContext {
    std::vector<FetchedView> prc_views;
    std::vector<FetchedView> snc_views;  // one per usable snapshot (or one pooled)
    std::vector<FetchedView> fic_views;
    double current_sparsity = 0.0;
};

// Evaluates the combined objective on one batch; with_grad additionally
// leaves dL/d(parameters) in the model's gradient buffers. The soft-movement
// regularizer value is passed in pre-weighted and its score pressure is
// applied by the criterion update, not through the encoder.
LossTerms total_loss(Model& model, const Batch& batch, const ContrastContext& ctx,
                     const LossWeights& weights, const ContrastiveConfig& contrastive,
                     const Model* kd_teacher, double regularizer_value, bool with_grad);

struct RunArtifacts {
    std::string run_dir;
    std::string pretrained_dir;
    std::string finetuned_dir;
    std::string final_dir;
    std::string metrics_path;
    SnapshotRegistry registry;
    double measured_sparsity = 0.0;
    double dev_accuracy = 0.0;
    double dev_f1 = 0.0;
    std::uint64_t mask_sequence_digest = 0;
};

struct RunDatasets {
    Dataset train;
    Dataset dev;
};

RunDatasets load_run_datasets(const RunConfig& cfg);

RunArtifacts run_cap(const RunConfig& cfg);

}  // namespace cap
