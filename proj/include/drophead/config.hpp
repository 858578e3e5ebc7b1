#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "drophead/data.hpp"
#include "drophead/train.hpp"

namespace drophead {

struct DatasetParams {
    TaskKind task = TaskKind::copy;
    int vocab = 32;
    int min_len = 5;
    int max_len = 16;
    int train_size = 10000;
    int dev_size = 1000;
    int test_size = 1000;
    int num_classes = 4;  // classification tasks only
    std::uint64_t seed = 7;

    Dataset generate() const;
};

// Full experiment description. Parsing is strict: unknown keys are rejected
// and the document round-trips losslessly.
struct ExperimentConfig {
    ModelConfig model;
    ScheduleSpec schedule;
    Arm arm = Arm::none;
    double drophead_p = 0.2;
    double attn_dropout_p = 0.1;
    double base_lr = 2e-3;
    std::int64_t warmup_steps = 400;
    std::int64_t total_steps = 3000;
    int batch_size = 16;
    std::int64_t eval_interval = 250;
    double clip_norm = 1.0;
    MaskGranularity granularity = MaskGranularity::per_example;
    bool rescale_after_wo = false;
    Dtype dtype = Dtype::f32;
    DatasetParams dataset;
    std::string output_dir = "runs";
    std::vector<std::uint64_t> seeds = {1};

    TrainConfig train_config(std::uint64_t seed) const;
    void validate() const;
};

ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);
std::string serialize_experiment_config(const ExperimentConfig& cfg);

// Named comparison arms: an Arm plus, for DropHead arms, the schedule kind.
struct ArmSpec {
    std::string name;
    Arm arm = Arm::none;
    ScheduleKind schedule_kind = ScheduleKind::constant;
};

ArmSpec arm_spec_from_name(const std::string& name);
std::vector<std::string> known_arm_names();

// Applies an arm spec on top of a base config (arm + schedule kind).
ExperimentConfig with_arm(const ExperimentConfig& base, const ArmSpec& spec);

}  // namespace drophead
