// roste_lab: experiment harness.
//
//   roste_lab <prop1|theorem1|fig4|train|fwht-check|select> [--config PATH] [--seed N] [--out DIR] [--threads N]
//
// Precedence for seed and output directory: flag > environment (ROSTE_SEED,
// ROSTE_OUT) > config file > built-in default.

#include "roste/errors.hpp"
#include "roste/lab/commands.hpp"
#include "roste/lab/config.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

namespace {

std::optional<std::uint64_t> env_seed()
{
    const char* v = std::getenv("ROSTE_SEED");
    if (!v || !*v)
        return std::nullopt;
    try {
        std::size_t pos = 0;
        const auto seed = std::stoull(v, &pos);
        if (pos != std::string(v).size())
            throw std::invalid_argument("trailing characters");
        return seed;
    } catch (const std::exception&) {
        throw roste::ConfigError(std::string("ROSTE_SEED is not an unsigned integer: '") + v + "'");
    }
}

std::optional<std::string> env_out()
{
    const char* v = std::getenv("ROSTE_OUT");
    if (!v || !*v)
        return std::nullopt;
    return std::string(v);
}

} // namespace

int main(int argc, char** argv)
{
    using namespace roste::lab;

    CLI::App app{"Rotated straight-through-estimator experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::size_t> threads;

    const std::vector<std::pair<std::string, Experiment>> commands = {
        {"prop1", Experiment::prop1},   {"theorem1", Experiment::theorem1},     {"fig4", Experiment::fig4},
        {"train", Experiment::train},   {"fwht-check", Experiment::fwht_check}, {"select", Experiment::select},
    };
    std::optional<Experiment> chosen;
    for (const auto& [name, exp] : commands) {
        CLI::App* sub = app.add_subcommand(name, "run the " + name + " experiment");
        sub->add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "global seed");
        sub->add_option("--out", out, "output directory");
        sub->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
        sub->callback([&chosen, e = exp]() { chosen = e; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    ExperimentConfig cfg;
    try {
        if (!config_path.empty()) {
            cfg = load_config(config_path);
            if (cfg.experiment != *chosen)
                throw roste::ConfigError("config file is for experiment '" + to_string(cfg.experiment) +
                                         "', not '" + to_string(*chosen) + "'");
        }
        cfg.experiment = *chosen;
        if (auto s = env_seed())
            cfg.seed = *s;
        if (auto o = env_out())
            cfg.output_dir = *o;
        if (seed)
            cfg.seed = *seed;
        if (out)
            cfg.output_dir = *out;
        if (threads)
            cfg.threads = *threads;
    } catch (const std::exception& e) {
        std::cerr << "roste_lab: " << e.what() << "\n";
        return kExitConfig;
    }

    CommandResult res;
    try {
        res = run_experiment(cfg);
    } catch (const std::exception& e) {
        std::cerr << "roste_lab: " << e.what() << "\n";
        return kExitConfig;
    }
    for (const auto& line : res.summary)
        (res.exit_code == kExitOk ? std::cout : std::cerr) << line << "\n";
    if (res.exit_code == kExitOk)
        std::cout << "outputs written to " << cfg.output_dir << "\n";
    return res.exit_code;
}
