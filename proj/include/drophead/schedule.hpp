#pragma once

#include <cstdint>
#include <string>

namespace drophead {

enum class ScheduleKind { v_shaped, constant, curriculum, anti_curriculum };

std::string to_string(ScheduleKind k);
ScheduleKind schedule_kind_from_string(const std::string& s);

// Dropout-rate trajectory over training steps. The v_shaped curve ramps
// p_start -> 0 over the warmup window and 0 -> p_end over the rest.
struct ScheduleSpec {
    ScheduleKind kind = ScheduleKind::v_shaped;
    double p_start = 0.2;
    double p_end = 0.2;
    std::int64_t warmup_steps = 4000;
    std::int64_t total_steps = 100000;

    void validate() const;

    static ScheduleSpec v_shaped(double p, std::int64_t warmup, std::int64_t total) {
        return {ScheduleKind::v_shaped, p, p, warmup, total};
    }
    static ScheduleSpec constant(double p, std::int64_t warmup, std::int64_t total) {
        return {ScheduleKind::constant, p, p, warmup, total};
    }
};

// Rate at a given step; pure, defined on [0, total_steps].
double drop_rate_at(const ScheduleSpec& spec, std::int64_t step);

// Linear warmup to base_lr, then inverse-square-root decay; continuous at
// the warmup boundary.
double learning_rate_at(double base_lr, std::int64_t warmup_steps, std::int64_t step);

}  // namespace drophead
