#include "drophead/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace drophead {

std::string to_string(ScheduleKind k) {
    switch (k) {
        case ScheduleKind::v_shaped: return "v_shaped";
        case ScheduleKind::constant: return "constant";
        case ScheduleKind::curriculum: return "curriculum";
        case ScheduleKind::anti_curriculum: return "anti_curriculum";
    }
    throw std::logic_error("unknown schedule kind");
}

ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "v_shaped") return ScheduleKind::v_shaped;
    if (s == "constant") return ScheduleKind::constant;
    if (s == "curriculum") return ScheduleKind::curriculum;
    if (s == "anti_curriculum") return ScheduleKind::anti_curriculum;
    throw std::invalid_argument("unknown schedule kind: " + s);
}

void ScheduleSpec::validate() const {
    if (p_start < 0.0 || p_start >= 1.0 || p_end < 0.0 || p_end >= 1.0) {
        throw std::invalid_argument("schedule: rates must lie in [0,1)");
    }
    if (warmup_steps <= 0) throw std::invalid_argument("schedule: warmup_steps must be > 0");
    if (total_steps <= warmup_steps) {
        throw std::invalid_argument("schedule: total_steps must exceed warmup_steps");
    }
}

double drop_rate_at(const ScheduleSpec& spec, std::int64_t step) {
    spec.validate();
    if (step < 0) throw std::invalid_argument("schedule: negative step");
    if (step > spec.total_steps) {
        throw std::invalid_argument("schedule: step " + std::to_string(step) +
                                    " beyond total_steps " + std::to_string(spec.total_steps));
    }
    const double t = static_cast<double>(step);
    const double tw = static_cast<double>(spec.warmup_steps);
    const double tt = static_cast<double>(spec.total_steps);
    switch (spec.kind) {
        case ScheduleKind::v_shaped:
            if (step <= spec.warmup_steps) return spec.p_start * (1.0 - t / tw);
            return spec.p_end * ((t - tw) / (tt - tw));
        case ScheduleKind::constant:
            return spec.p_end;
        case ScheduleKind::curriculum:
            return spec.p_end * (t / tt);
        case ScheduleKind::anti_curriculum:
            return spec.p_start * (1.0 - t / tt);
    }
    throw std::logic_error("unknown schedule kind");
}

double learning_rate_at(double base_lr, std::int64_t warmup_steps, std::int64_t step) {
    if (warmup_steps < 1) throw std::invalid_argument("learning_rate_at: warmup_steps >= 1");
    if (step < 0) throw std::invalid_argument("learning_rate_at: negative step");
    const double tw = static_cast<double>(warmup_steps);
    if (step <= warmup_steps) return base_lr * static_cast<double>(step) / tw;
    return base_lr * std::sqrt(tw / static_cast<double>(step));
}

}  // namespace drophead
