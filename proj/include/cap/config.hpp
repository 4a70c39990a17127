// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a single strict-keys JSON document with a default for
// every field. The resolved config is echoed verbatim into the run directory.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cap/contrastive.hpp"
#include "cap/model.hpp"
#include "cap/pruners.hpp"
#include "cap/schedule.hpp"

namespace cap {

enum class Method { first_order, cap_f, movement, cap_m, soft_movement, cap_soft, magnitude };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

Criterion criterion_of(Method m);
ScheduleKind schedule_kind_of(Method m);
// The cap_* methods add contrastive supervision; the bare ones are baselines.
bool is_cap_method(Method m);

struct DatasetSpec {
    std::string kind = "synthetic";  // synthetic | tsv
    std::string family = "pair_agreement";
    int n_examples = 1024;
    int n_classes = 2;
    int n_dev = -1;  // defaults to n_examples / 4
    std::string train_tsv;
    std::string dev_tsv;

    bool operator==(const DatasetSpec&) const = default;
};

struct LossWeights {
    double lambda_ce = 1.0;
    double lambda_prc = 1.0;
    double lambda_snc = 1.0;
    double lambda_fic = 1.0;
    double kd_weight = 0.0;
    double kd_temperature = 2.0;

    bool operator==(const LossWeights&) const = default;
};

struct TrainConfig {
    int batch_size = 16;
    double lr = 5e-4;
    double score_lr = 1e-2;
    int finetune_epochs = 4;
    int pretrain_steps = 300;
    int mask_update_interval = 1;
    std::string topk_scope = "global";  // global | per_site
    double threshold = 0.0;             // soft-movement
    double regularizer_weight = 1e-2;   // soft-movement
    int eval_every = 50;
    bool first_order_abs_per_batch = true;
    bool drop_snapshot_weights = false;
    int retrain_epochs_per_milestone = 2;
    int retrain_steps_per_milestone = -1;  // overrides the epoch budget when >= 0
    double milestone_fraction = 10.0;
    int warmup_steps = 60;
    int ramp_steps = 360;
    int cooldown_steps = 180;
    std::vector<double> snapshot_crossings = {0.25, 0.5, 0.75};

    bool operator==(const TrainConfig&) const = default;
};

struct RunConfig {
    Method method = Method::cap_m;
    double target_sparsity = 90.0;
    std::string schedule_kind = "auto";  // auto | milestones | cubic
    std::uint64_t seed = 1;
    std::string output_dir = "runs/out";
    ModelConfig model;
    DatasetSpec data;
    ContrastiveConfig contrastive;
    LossWeights loss;
    TrainConfig train;

    ScheduleKind resolved_schedule_kind() const;
    void validate() const;

    bool operator==(const RunConfig&) const = default;
};

// Strict parse: unknown keys error with the offending key path; missing keys
// take defaults. The document is a JSON object.
RunConfig parse_config(const std::string& document);
RunConfig parse_config_file(const std::string& path);

std::string serialize_config(const RunConfig& cfg);

// Applies CAP_OUTPUT_ROOT to relative output dirs.
std::string resolve_output_dir(const std::string& output_dir);

}  // namespace cap
