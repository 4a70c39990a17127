// SPDX-License-Identifier: Apache-2.0
//
// Sparsity schedules: milestone-based iterative pruning for structured runs,
// cubic ramp with cool-down for unstructured runs, and the snapshot-capture
// points for both.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cap/common.hpp"

namespace cap {

enum class ScheduleKind { milestones, cubic };

struct PruneMilestone {
    std::int64_t step = 0;
    double sparsity = 0.0;
};

struct SparsitySchedule {
    ScheduleKind kind = ScheduleKind::cubic;

    // kind == milestones
    std::vector<PruneMilestone> milestones;

    // kind == cubic
    double initial_sparsity = 0.0;  // s_i
    double final_sparsity = 90.0;   // s_f, the target R%
    std::int64_t warmup_end = 0;    // t_i
    std::int64_t ramp_end = 0;      // t_f
    std::int64_t cooldown_steps = 0;

    std::int64_t total_steps = 0;
};

// Sparsity milestones step_fraction, 2*step_fraction, ..., R (a final partial
// milestone when R is not a multiple), each followed by `retrain_steps` of
// training.
std::vector<double> milestone_sparsities(double target_sparsity, double step_fraction = 10.0);

SparsitySchedule milestone_schedule(double target_sparsity, std::int64_t retrain_steps,
                                    double step_fraction = 10.0);

SparsitySchedule cubic_schedule(double initial_sparsity, double final_sparsity,
                                std::int64_t warmup_end, std::int64_t ramp_end,
                                std::int64_t cooldown_steps);

// r(t): s_i up to t_i, the cubic ramp between t_i and t_f, s_f afterwards.
double cubic_sparsity(std::int64_t t, const SparsitySchedule& schedule);

// Requested sparsity at step t for either schedule kind.
double scheduled_sparsity(std::int64_t t, const SparsitySchedule& schedule);

// Snapshot-capture points. Milestones snapshot once per milestone (at the end
// of its retraining window); cubic schedules snapshot at the configured ramp
// crossings plus the final-sparsity crossing.
std::vector<PruneMilestone> snapshot_points(const SparsitySchedule& schedule,
                                            const std::vector<double>& ramp_fractions = {0.25, 0.5,
                                                                                         0.75});

}  // namespace cap
