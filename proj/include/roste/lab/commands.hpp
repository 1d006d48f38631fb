#pragma once

// Experiment orchestration behind the roste_lab CLI.
//
// Every command writes into ExperimentConfig::output_dir:
//   config.json    the fully resolved configuration (re-runnable with --config)
//   results.csv    the primary table of the experiment
//   manifest.json  config hash, artifact version, seed, duration, output files
// plus command-specific extras (per_seed.csv, summary.csv, model.json, ...).

#include "roste/lab/config.hpp"
#include "roste/roste.hpp"

#include "json.hpp"

#include <functional>
#include <string>
#include <vector>

namespace roste::lab {

inline constexpr const char* kArtifactVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitAssertion = 1, kExitConfig = 2, kExitDivergence = 3 };

struct CommandResult {
    int exit_code = kExitOk;
    std::vector<std::string> summary; // human-readable lines
    std::vector<std::string> outputs; // file names relative to output_dir
};

// Validates cfg, runs the selected experiment and writes config echo and manifest.
// Configuration problems and divergence are reported through exit_code, not thrown.
CommandResult run_experiment(const ExperimentConfig& cfg);

// Individual commands; they assume a validated config and an existing output_dir.
CommandResult cmd_prop1(const ExperimentConfig& cfg);
CommandResult cmd_theorem1(const ExperimentConfig& cfg);
CommandResult cmd_fig4(const ExperimentConfig& cfg);
CommandResult cmd_train(const ExperimentConfig& cfg);
CommandResult cmd_select(const ExperimentConfig& cfg);
CommandResult cmd_fwht_check(const ExperimentConfig& cfg);

// Synthetic teacher/student task used by fig4 and train.
struct Task {
    QNetState teacher;    // full-precision generator of the targets
    QNetState pretrained; // teacher plus noise; the QAT starting point
    Dataset data;
};

Task make_task(const TaskParams& params, std::uint64_t seed);

// Random multi-layer instance for the rotation-selection study, with a
// calibration batch. Layers mix outlier-heavy, grid-aligned and Gaussian weights.
struct SelectionInstance {
    QNetState net;
    Matrix calib;
};

SelectionInstance make_selection_instance(const SelectParams& params, std::uint64_t seed);

// Model dump: JSON with exact (round-trip) doubles. See README.md.
nlohmann::json dump_state(const TrainerState& state);
TrainerState load_state(const nlohmann::json& j);
TrainerState load_state_file(const std::string& path);

// Calls fn(i) for i in [0, n) on up to `threads` workers. If any call throws,
// the exception of the lowest failing index is rethrown.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

} // namespace roste::lab
