#pragma once

// Experiment configuration for the lab CLI. The on-disk form is a JSON object;
// every key is optional and unknown keys are rejected. See README.md for the schema.

#include "roste/qnet.hpp"
#include "roste/quant.hpp"
#include "roste/roste.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace roste::lab {

enum class Experiment { prop1, theorem1, fig4, train, select, fwht_check };

struct Prop1Params {
    std::vector<std::size_t> dims = {16, 64, 256};
    std::vector<int> bits = {2, 4, 8};
    std::vector<WeightDistribution> distributions = {WeightDistribution::gaussian, WeightDistribution::outlier};
    std::size_t trials = 10000;
    double delta = 0.05;
    double slack = 0.01;
};

struct Theorem1Params {
    std::size_t d = 64;
    std::size_t data_count = 512;
    int x_bits = 4;
    int w_bits = 4;
    std::size_t seeds = 20;
    std::size_t T = 20000;
    std::size_t log_every = 100;
    OutlierProfile outliers;
    double slack = 0.02;
    // Assertions; nullopt disables.
    std::optional<double> expect_ratio_max = 0.5;
    std::optional<double> expect_decay_orders;
};

// Synthetic teacher-student task. Layer widths are dims[0] -> dims[1] -> ... ;
// hidden layers use relu. With outlier magnitude M > 1, input channel
// `outlier_channel` and the matching weight row of every layer are scaled by M.
struct TaskParams {
    std::vector<std::size_t> dims = {32, 32, 32, 1};
    std::size_t samples = 512;
    LossKind loss = LossKind::quadratic;
    double outlier_magnitude = 10.0;
    std::size_t outlier_channel = 0;
    double pretrain_noise = 0.05;
    int w_bits = 4;
    int x_bits = 4;
    QuantMode mode = QuantMode::symmetric;
    Grouping w_grouping = Grouping::per_row;
    double clip = 1.0;
};

struct Fig4Params {
    TaskParams task;
    std::size_t seeds = 20;
    std::size_t warmup = 10;
    bool expect_roste_below = true;
    double min_pass_fraction = 0.9;
};

struct TrainParams {
    TaskParams task;
    std::string resume_from; // model dump to continue from; empty starts fresh
};

struct SelectParams {
    std::size_t instances = 100;
    std::size_t min_layers = 2;
    std::size_t max_layers = 10;
    std::size_t width = 16;
    std::size_t calib_n = 32;
    int w_bits = 4;
    int x_bits = 4;
    double tolerance = 0.05;
    double min_fraction = 0.9;
};

struct FwhtCheckParams {
    std::vector<std::size_t> dims = {2, 4, 8, 16, 32, 64, 128, 256, 512, 1024};
    std::size_t vectors = 100;
    double tolerance = 1e-10;
};

struct ExperimentConfig {
    Experiment experiment = Experiment::prop1;
    std::uint64_t seed = 1;
    std::string output_dir = "out";
    std::size_t threads = 1;
    RosteConfig roste = default_roste();
    Prop1Params prop1;
    Theorem1Params theorem1;
    Fig4Params fig4;
    TrainParams train;
    SelectParams select;
    FwhtCheckParams fwht_check;

    static RosteConfig default_roste();
    // Throws ConfigError on out-of-range values.
    void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
// Missing keys keep their defaults. Throws ConfigError on unknown keys or bad types.
ExperimentConfig from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

// FNV-1a 64 over the canonical (sorted-key, compact) serialization, as 16 hex
// digits. output_dir and threads are excluded.
std::string config_hash(const ExperimentConfig& cfg);

std::string to_string(Experiment e);
Experiment parse_experiment(const std::string& s);

} // namespace roste::lab
