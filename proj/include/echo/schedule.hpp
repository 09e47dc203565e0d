#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "echo/common.hpp"

namespace echo {

/// Three-stage learning-rate schedule with cosine annealing inside each stage.
/// stage_boundaries are exclusive step ends; stage s spans
/// [boundaries[s-1], boundaries[s]).
struct ScheduleConfig {
    std::array<double, 3> stage_rates{6e-5, 6e-6, 6e-7};
    std::array<std::int64_t, 3> stage_boundaries{600, 900, 1000};
    double weight_decay = 0.0005;

    /// Default 60/30/10 split of a run's total steps.
    static ScheduleConfig for_total_steps(std::int64_t total,
                                          std::array<double, 3> rates = {6e-5, 6e-6, 6e-7},
                                          double weight_decay = 0.0005) {
        if (total < 1) throw contract_error("schedule: total steps must be >= 1");
        ScheduleConfig cfg;
        cfg.stage_rates = rates;
        cfg.weight_decay = weight_decay;
        std::int64_t b0 = std::max<std::int64_t>(1, (total * 6) / 10);
        std::int64_t b1 = std::max(b0 + 1, (total * 9) / 10);
        std::int64_t b2 = std::max(b1 + 1, total);
        cfg.stage_boundaries = {b0, b1, b2};
        return cfg;
    }

    void validate() const {
        if (!(stage_rates[0] > stage_rates[1] && stage_rates[1] > stage_rates[2])) {
            throw contract_error("schedule: stage rates must be strictly decreasing");
        }
        if (!(stage_boundaries[0] >= 1 && stage_boundaries[0] < stage_boundaries[1] &&
              stage_boundaries[1] < stage_boundaries[2])) {
            throw contract_error("schedule: stage boundaries must be strictly increasing");
        }
        if (weight_decay < 0.0) throw contract_error("schedule: negative weight decay");
    }
};

/// Learning rate at a step: the stage base annealed by 0.5*(1 + cos(pi*p))
/// with in-stage progress p in [0,1). Steps past the final boundary hold the
/// last scheduled rate (the schedule floors rather than erroring).
inline double lr_at(std::int64_t step, const ScheduleConfig& cfg) {
    cfg.validate();
    if (step < 0) throw contract_error("lr_at: negative step");
    if (step >= cfg.stage_boundaries[2]) step = cfg.stage_boundaries[2] - 1;
    int stage = 0;
    while (step >= cfg.stage_boundaries[stage]) ++stage;
    const std::int64_t start = stage == 0 ? 0 : cfg.stage_boundaries[stage - 1];
    const std::int64_t len = cfg.stage_boundaries[stage] - start;
    const double progress = static_cast<double>(step - start) / static_cast<double>(len);
    return cfg.stage_rates[stage] * 0.5 * (1.0 + std::cos(M_PI * progress));
}

}  // namespace echo
