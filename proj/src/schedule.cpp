// SPDX-License-Identifier: Apache-2.0

#include "cap/schedule.hpp"

#include <algorithm>
#include <cmath>

namespace cap {

std::vector<double> milestone_sparsities(double target_sparsity, double step_fraction) {
    if (!(target_sparsity > 0.0 && target_sparsity < 100.0)) {
        throw ConfigError("target sparsity must lie in (0, 100)");
    }
    if (!(step_fraction > 0.0)) throw ConfigError("milestone step fraction must be positive");
    std::vector<double> out;
    for (double r = step_fraction; r < target_sparsity - 1e-9; r += step_fraction) {
        out.push_back(r);
    }
    out.push_back(target_sparsity);
    return out;
}

SparsitySchedule milestone_schedule(double target_sparsity, std::int64_t retrain_steps,
                                    double step_fraction) {
    if (retrain_steps < 1) throw ConfigError("retrain budget must be at least one step");
    SparsitySchedule s;
    s.kind = ScheduleKind::milestones;
    s.final_sparsity = target_sparsity;
    const std::vector<double> sparsities = milestone_sparsities(target_sparsity, step_fraction);
    // Window 0 trains dense; milestone k prunes at step (k+1)*retrain_steps.
    for (std::size_t k = 0; k < sparsities.size(); ++k) {
        s.milestones.push_back({static_cast<std::int64_t>(k + 1) * retrain_steps, sparsities[k]});
    }
    s.total_steps = s.milestones.back().step + retrain_steps;
    return s;
}

SparsitySchedule cubic_schedule(double initial_sparsity, double final_sparsity,
                                std::int64_t warmup_end, std::int64_t ramp_end,
                                std::int64_t cooldown_steps) {
    if (!(final_sparsity > 0.0 && final_sparsity < 100.0)) {
        throw ConfigError("target sparsity must lie in (0, 100)");
    }
    if (initial_sparsity < 0.0 || initial_sparsity >= final_sparsity) {
        throw ConfigError("initial sparsity must lie in [0, final)");
    }
    if (warmup_end >= ramp_end) throw ConfigError("warmup must end before the ramp ends");
    if (cooldown_steps < 0) throw ConfigError("cooldown steps must be non-negative");
    SparsitySchedule s;
    s.kind = ScheduleKind::cubic;
    s.initial_sparsity = initial_sparsity;
    s.final_sparsity = final_sparsity;
    s.warmup_end = warmup_end;
    s.ramp_end = ramp_end;
    s.cooldown_steps = cooldown_steps;
    s.total_steps = ramp_end + cooldown_steps;
    return s;
}

double cubic_sparsity(std::int64_t t, const SparsitySchedule& schedule) {
    const double si = schedule.initial_sparsity, sf = schedule.final_sparsity;
    if (t <= schedule.warmup_end) return si;
    if (t >= schedule.ramp_end) return sf;
    const double u = static_cast<double>(t - schedule.warmup_end) /
                     static_cast<double>(schedule.ramp_end - schedule.warmup_end);
    const double c = 1.0 - u;
    return sf + (si - sf) * c * c * c;
}

double scheduled_sparsity(std::int64_t t, const SparsitySchedule& schedule) {
    if (schedule.kind == ScheduleKind::cubic) return cubic_sparsity(t, schedule);
    double r = 0.0;
    for (const auto& m : schedule.milestones) {
        if (t >= m.step) r = m.sparsity;
    }
    return r;
}

std::vector<PruneMilestone> snapshot_points(const SparsitySchedule& schedule,
                                            const std::vector<double>& ramp_fractions) {
    std::vector<PruneMilestone> out;
    if (schedule.kind == ScheduleKind::milestones) {
        // One snapshot per milestone, at the end of its retraining window.
        const std::int64_t window = schedule.milestones.front().step;
        for (const auto& m : schedule.milestones) {
            out.push_back({m.step + window - 1, m.sparsity});
        }
        return out;
    }

    const double si = schedule.initial_sparsity, sf = schedule.final_sparsity;
    std::vector<double> crossings;
    for (double f : ramp_fractions) crossings.push_back(si + f * (sf - si));
    crossings.push_back(sf);
    for (double v : crossings) {
        // Invert r(t) = sf + (si - sf) (1 - u)^3 at r = v.
        const double u = 1.0 - std::cbrt((sf - v) / (sf - si));
        const auto t = static_cast<std::int64_t>(
            std::ceil(static_cast<double>(schedule.warmup_end) +
                      u * static_cast<double>(schedule.ramp_end - schedule.warmup_end)));
        const PruneMilestone point{std::min(t, schedule.ramp_end),
                                   cubic_sparsity(std::min(t, schedule.ramp_end), schedule)};
        if (!out.empty() &&
            (out.back().step >= point.step || out.back().sparsity >= point.sparsity)) {
            continue;  // steep ramps can collapse neighboring crossings
        }
        out.push_back(point);
    }
    return out;
}

}  // namespace cap
