#include "roste/errors.hpp"
#include "roste/lab/commands.hpp"
#include "roste/lab/config.hpp"
#include "roste/lab/csv.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace roste;
using namespace roste::lab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("roste_labcli_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p.parent_path());
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text)
{
    std::ofstream f(p, std::ios::binary);
    f << text;
}

int run_cli(const std::string& args, const std::string& env = "")
{
    const std::string cmd = env + (env.empty() ? "" : " ") + ROSTE_LAB_BIN + std::string(" ") + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ExperimentConfig quick(Experiment e, const fs::path& out)
{
    ExperimentConfig c;
    c.experiment = e;
    c.output_dir = out.string();
    c.prop1.dims = {16, 64};
    c.prop1.bits = {2, 4};
    c.prop1.trials = 300;
    c.theorem1.d = 16;
    c.theorem1.data_count = 64;
    c.theorem1.seeds = 3;
    c.theorem1.T = 400;
    c.theorem1.log_every = 50;
    c.theorem1.expect_ratio_max = std::nullopt;
    c.fig4.seeds = 2;
    c.fig4.task.dims = {16, 16, 1};
    c.fig4.task.samples = 64;
    c.fig4.expect_roste_below = false;
    c.train.task = c.fig4.task;
    c.roste.T = 20;
    c.roste.calib_n = 16;
    c.roste.log_every = 5;
    c.select.instances = 6;
    c.select.max_layers = 4;
    c.select.min_fraction = 0.0;
    c.fwht_check.dims = {2, 8, 64};
    c.fwht_check.vectors = 5;
    return c;
}

} // namespace

TEST(Config, DefaultsRoundTripThroughJson)
{
    const ExperimentConfig def;
    const ExperimentConfig back = from_json(to_json(def));
    EXPECT_EQ(to_json(back), to_json(def));
    EXPECT_EQ(config_hash(back), config_hash(def));
    EXPECT_EQ(def.roste.K, 1u);
    ASSERT_TRUE(def.roste.eta.has_value());
}

TEST(Config, HashIgnoresOutputLocationAndThreads)
{
    ExperimentConfig a;
    ExperimentConfig b = a;
    b.output_dir = "elsewhere";
    b.threads = 4;
    EXPECT_EQ(config_hash(a), config_hash(b));
    b.seed = 2;
    EXPECT_NE(config_hash(a), config_hash(b));
    EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Config, HashIsFrozenForDefaultConfig)
{
    // FNV-1a over the canonical JSON dump; changes only with the schema or defaults.
    const std::string h = config_hash(ExperimentConfig{});
    EXPECT_EQ(h.find_first_not_of("0123456789abcdef"), std::string::npos);
    nlohmann::json j = to_json(ExperimentConfig{});
    j.erase("output_dir");
    j.erase("threads");
    std::uint64_t ref = 0xcbf29ce484222325ULL;
    for (unsigned char c : j.dump()) {
        ref ^= c;
        ref *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(ref));
    EXPECT_EQ(h, buf);
}

TEST(Config, PartialDocumentsAndAutoEta)
{
    const auto c = from_json(nlohmann::json::parse(R"({"experiment":"theorem1","seed":7,"roste":{"eta":"auto"}})"));
    EXPECT_EQ(c.experiment, Experiment::theorem1);
    EXPECT_EQ(c.seed, 7u);
    EXPECT_FALSE(c.roste.eta.has_value());
    EXPECT_EQ(to_json(c)["roste"]["eta"], "auto");
    EXPECT_EQ(parse_experiment("fwht-check"), Experiment::fwht_check);
    EXPECT_EQ(parse_experiment("fwht_check"), Experiment::fwht_check);
}

TEST(Config, RejectsUnknownKeysAndBadValues)
{
    using nlohmann::json;
    EXPECT_THROW(from_json(json::parse(R"({"experimnt":"prop1"})")), ConfigError);
    EXPECT_THROW(from_json(json::parse(R"({"prop1":{"trails":5}})")), ConfigError);
    EXPECT_THROW(from_json(json::parse(R"({"roste":{"eta":"fast"}})")), ConfigError);
    EXPECT_THROW(from_json(json::parse(R"({"seed":"one"})")), ConfigError);
    EXPECT_THROW(from_json(json::parse(R"({"experiment":"nope"})")), ConfigError);
    EXPECT_THROW(from_json(json::parse(R"([1,2])")), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/roste.json"), ConfigError);
}

TEST(Config, ValidationPerExperiment)
{
    ExperimentConfig c;
    c.prop1.trials = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.prop1.dims = {48};
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.experiment = Experiment::select;
    c.select.max_layers = 21;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.experiment = Experiment::train;
    c.roste.eta = std::nullopt;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.threads = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_NO_THROW(ExperimentConfig{}.validate());
}

TEST(Csv, Rfc4180Formatting)
{
    CsvWriter w({"a", "b", "c"});
    w.row({std::string("x,y"), 0.1, std::int64_t{-3}});
    w.row({std::string("say \"hi\""), 1e-300, std::uint64_t{18446744073709551615ULL}});
    EXPECT_EQ(w.str(), "a,b,c\r\n\"x,y\",0.1,-3\r\n\"say \"\"hi\"\"\",1e-300,18446744073709551615\r\n");
    EXPECT_EQ(w.row_count(), 2u);
    EXPECT_THROW(w.row({1.0}), ShapeError);
}

TEST(Csv, DoublesRoundTripExactly)
{
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const double v = rng.normal() * std::pow(10.0, static_cast<double>(rng.below(40)) - 20);
        EXPECT_EQ(std::strtod(format_double(v).c_str(), nullptr), v);
    }
    EXPECT_EQ(format_double(2.0), "2");
    EXPECT_EQ(format_double(0.5), "0.5");
}

TEST(ParallelFor, VisitsEveryIndexAndRethrowsLowestFailure)
{
    for (std::size_t threads : {1u, 3u}) {
        std::vector<int> hits(50, 0);
        parallel_for(50, threads, [&](std::size_t i) { hits[i] += 1; });
        EXPECT_EQ(hits, std::vector<int>(50, 1));
        try {
            parallel_for(20, threads, [](std::size_t i) {
                if (i == 7 || i == 13)
                    throw std::runtime_error("fail " + std::to_string(i));
            });
            FAIL();
        } catch (const std::runtime_error& e) {
            EXPECT_STREQ(e.what(), "fail 7");
        }
    }
}

TEST(Task, DeterministicWithOutlierStructure)
{
    TaskParams p;
    p.dims = {16, 16, 2};
    p.samples = 32;
    const Task a = make_task(p, 5);
    const Task b = make_task(p, 5);
    EXPECT_EQ(a.data.x, b.data.x);
    EXPECT_EQ(a.pretrained.weights(), b.pretrained.weights());
    EXPECT_EQ(a.data.y, predict_full_precision(a.teacher, a.data.x));
    // The outlier input channel dominates the others.
    double big = 0, small = 0;
    for (std::size_t n = 0; n < 32; ++n) {
        big += std::fabs(a.data.x(n, 0));
        small += std::fabs(a.data.x(n, 1));
    }
    EXPECT_GT(big, 5 * small);
    p.loss = LossKind::cross_entropy;
    const Task c = make_task(p, 5);
    for (double v : c.data.y.data())
        EXPECT_TRUE(v == 0.0 || v == 1.0);
}

TEST(Dump, RoundTripReproducesForwardExactly)
{
    TaskParams p;
    p.dims = {16, 16, 1};
    p.samples = 32;
    const Task task = make_task(p, 3);
    RosteConfig rc = ExperimentConfig::default_roste();
    rc.T = 10;
    rc.momentum = 0.5;
    rc.calib_n = 16;
    RosteResult res = run_roste(task.pretrained, task.data, rc, LossKind::quadratic);
    const nlohmann::json j = dump_state(res.state);
    const TrainerState back = load_state(nlohmann::json::parse(j.dump()));
    EXPECT_EQ(back.step, res.state.step);
    EXPECT_EQ(back.net.weights(), res.state.net.weights());
    EXPECT_EQ(back.net.rotations(), res.state.net.rotations());
    EXPECT_EQ(back.velocity, res.state.velocity);
    EXPECT_EQ(fingerprint(back.net), fingerprint(res.state.net));
    EXPECT_LE(max_abs_diff(predict(back.net, task.data.x), predict(res.state.net, task.data.x)), 1e-12);
    // Stored codes dequantize to the deployed weights.
    const auto& l0 = j["layers"][0];
    ASSERT_FALSE(l0["quantized_weight"].is_null());
    EXPECT_EQ(l0["quantized_weight"]["codes"].size(), 16u * 16u);
}

TEST(Dump, MalformedDumpsAreConfigErrors)
{
    EXPECT_THROW(load_state(nlohmann::json::parse(R"({"format":"other","version":1})")), ConfigError);
    EXPECT_THROW(load_state(nlohmann::json::parse(R"({"format":"roste-model","version":1})")), ConfigError);
    EXPECT_THROW(load_state_file("/nonexistent/model.json"), ConfigError);
}

TEST(Commands, EveryExperimentIsByteDeterministic)
{
    for (auto e : {Experiment::prop1, Experiment::theorem1, Experiment::fig4, Experiment::train, Experiment::select,
                   Experiment::fwht_check}) {
        const fs::path a = scratch(to_string(e) + "_a");
        const fs::path b = scratch(to_string(e) + "_b");
        const auto ra = run_experiment(quick(e, a));
        ExperimentConfig cb = quick(e, b);
        cb.threads = 2;
        const auto rb = run_experiment(cb);
        ASSERT_EQ(ra.exit_code, kExitOk) << to_string(e) << ": " << (ra.summary.empty() ? "" : ra.summary.back());
        EXPECT_EQ(rb.exit_code, kExitOk);
        for (const auto& f : ra.outputs) {
            if (f == "manifest.json" || f == "config.json")
                continue;
            EXPECT_EQ(slurp(a / f), slurp(b / f)) << to_string(e) << " " << f;
        }
        EXPECT_TRUE(fs::exists(a / "results.csv"));
        const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
        EXPECT_EQ(manifest["config_hash"], config_hash(quick(e, a)));
        EXPECT_EQ(manifest["artifact_version"], kArtifactVersion);
        for (const auto& f : manifest["outputs"])
            EXPECT_TRUE(fs::exists(a / f.get<std::string>())) << f;
    }
}

TEST(Commands, Prop1CsvColumnsAndPass)
{
    const fs::path out = scratch("prop1_cols");
    const auto r = run_experiment(quick(Experiment::prop1, out));
    EXPECT_EQ(r.exit_code, kExitOk);
    const std::string csv = slurp(out / "results.csv");
    EXPECT_EQ(csv.substr(0, csv.find("\r\n")),
              "d,b_w,trials,delta,eq16_violations,eq17_violation_frac,mean_err_identity,mean_err_rotated,"
              "distribution");
}

TEST(Commands, ConfigErrorsAndDivergenceExitCodes)
{
    ExperimentConfig c = quick(Experiment::prop1, scratch("bad_prop1"));
    c.prop1.trials = 0;
    EXPECT_EQ(run_experiment(c).exit_code, kExitConfig);

    c = quick(Experiment::fwht_check, scratch("fwht48"));
    c.fwht_check.dims = {48};
    const auto r = run_experiment(c);
    EXPECT_EQ(r.exit_code, kExitConfig);
    ASSERT_FALSE(r.summary.empty());
    EXPECT_NE(r.summary.back().find("48"), std::string::npos);

    const fs::path dout = scratch("diverge");
    c = quick(Experiment::train, dout);
    c.roste.eta = 50.0;
    c.roste.log_every = 1;
    EXPECT_EQ(run_experiment(c).exit_code, kExitDivergence);
    EXPECT_TRUE(fs::exists(dout / "divergence.csv"));
    EXPECT_TRUE(fs::exists(dout / "manifest.json"));
}

TEST(Commands, TrainResumeContinuesTrajectory)
{
    const fs::path full_dir = scratch("train_full");
    ExperimentConfig full = quick(Experiment::train, full_dir);
    full.roste.T = 40;
    ASSERT_EQ(run_experiment(full).exit_code, kExitOk);

    const fs::path half_dir = scratch("train_half");
    ExperimentConfig half = quick(Experiment::train, half_dir);
    ASSERT_EQ(run_experiment(half).exit_code, kExitOk);

    const fs::path resumed_dir = scratch("train_resumed");
    ExperimentConfig resumed = quick(Experiment::train, resumed_dir);
    resumed.train.resume_from = (half_dir / "model.json").string();
    ASSERT_EQ(run_experiment(resumed).exit_code, kExitOk);

    // Rows after step 20 of the full run equal the resumed rows.
    auto lines = [](const std::string& s) {
        std::vector<std::string> out;
        std::size_t pos = 0;
        while (pos < s.size()) {
            const auto e = s.find("\r\n", pos);
            out.push_back(s.substr(pos, e - pos));
            pos = e + 2;
        }
        return out;
    };
    const auto f = lines(slurp(full_dir / "results.csv"));
    const auto r = lines(slurp(resumed_dir / "results.csv"));
    ASSERT_EQ(r.size(), 5u); // header + steps 25, 30, 35, 40
    for (std::size_t i = 1; i < r.size(); ++i)
        EXPECT_EQ(r[i], f[f.size() - r.size() + i]);
    EXPECT_EQ(slurp(resumed_dir / "model.json"), slurp(full_dir / "model.json"));
}

TEST(Commands, SelectExhaustiveMatchesLayerwiseOnThreeLayerInstance)
{
    SelectParams p;
    p.min_layers = 3;
    p.max_layers = 3;
    std::size_t agree = 0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto inst = make_selection_instance(p, s);
        ASSERT_EQ(inst.net.layers.size(), 3u);
        const auto ex = select_rotations(inst.net, inst.calib, SelectionMode::exhaustive, s);
        const auto lw = select_rotations(inst.net, inst.calib, SelectionMode::layerwise, s);
        EXPECT_LE(ex.surrogate.total, lw.surrogate.total + 1e-12);
        agree += ex.rotations == lw.rotations ? 1 : 0;
    }
    EXPECT_GE(agree, 8u);
}

TEST(Commands, Fig4ControlTaskRunsWithoutOrdering)
{
    const fs::path out = scratch("fig4_control");
    ExperimentConfig c = quick(Experiment::fig4, out);
    c.fig4.task.outlier_magnitude = 1.0;
    const auto r = run_experiment(c);
    EXPECT_EQ(r.exit_code, kExitOk);
    const std::string csv = slurp(out / "results.csv");
    EXPECT_EQ(csv.substr(0, csv.find("\r\n")), "step,e_ste,e_roste");
}

TEST(Commands, Theorem1NearLosslessDecayAssertion)
{
    ExperimentConfig c = quick(Experiment::theorem1, scratch("t1_decay"));
    c.theorem1.d = 64;
    c.theorem1.data_count = 512;
    c.theorem1.w_bits = 12;
    c.theorem1.seeds = 2;
    c.theorem1.T = 20000;
    c.theorem1.log_every = 1000;
    c.theorem1.expect_decay_orders = 4.0;
    const auto r = run_experiment(c);
    EXPECT_EQ(r.exit_code, kExitOk) << (r.summary.empty() ? "" : r.summary.back());
}

TEST(Cli, ExitCodesAndSubcommands)
{
    const fs::path dir = scratch("cli");
    fs::create_directories(dir);
    EXPECT_EQ(run_cli("fwht-check --out " + (dir / "ok").string()), 0);
    write_file(dir / "d48.json", R"({"experiment":"fwht_check","fwht_check":{"dims":[48]}})");
    EXPECT_EQ(run_cli("fwht-check --config " + (dir / "d48.json").string() + " --out " + (dir / "d48").string()), 2);
    write_file(dir / "typo.json", R"({"experiment":"prop1","prop1":{"trails":1}})");
    EXPECT_EQ(run_cli("prop1 --config " + (dir / "typo.json").string()), 2);
    write_file(dir / "wrong.json", R"({"experiment":"select"})");
    EXPECT_EQ(run_cli("prop1 --config " + (dir / "wrong.json").string()), 2);
    EXPECT_EQ(run_cli("bogus"), 2);
    EXPECT_EQ(run_cli(""), 2);
    EXPECT_EQ(run_cli("prop1 --threads 0"), 2);
    EXPECT_EQ(run_cli("fwht-check --out " + (dir / "env").string(), "ROSTE_SEED=abc"), 2);
}

TEST(Cli, EnvironmentAndFlagPrecedence)
{
    const fs::path dir = scratch("cli_env");
    fs::create_directories(dir);
    auto seed_of = [](const fs::path& out) {
        return nlohmann::json::parse(slurp(out / "manifest.json"))["seed"].get<std::uint64_t>();
    };
    write_file(dir / "cfg.json", R"({"experiment":"fwht_check","seed":11,"fwht_check":{"dims":[4],"vectors":2}})");
    const std::string cfg = " --config " + (dir / "cfg.json").string();

    ASSERT_EQ(run_cli("fwht-check" + cfg + " --out " + (dir / "a").string()), 0);
    EXPECT_EQ(seed_of(dir / "a"), 11u);
    ASSERT_EQ(run_cli("fwht-check" + cfg, "ROSTE_SEED=22 ROSTE_OUT=" + (dir / "b").string()), 0);
    EXPECT_EQ(seed_of(dir / "b"), 22u);
    ASSERT_EQ(run_cli("fwht-check" + cfg + " --seed 33 --out " + (dir / "c").string(),
                      "ROSTE_SEED=22 ROSTE_OUT=" + (dir / "ignored").string()),
              0);
    EXPECT_EQ(seed_of(dir / "c"), 33u);
    EXPECT_FALSE(fs::exists(dir / "ignored"));
}

TEST(Cli, EchoedConfigReproducesRun)
{
    const fs::path dir = scratch("cli_echo");
    fs::create_directories(dir);
    write_file(dir / "cfg.json", R"({"experiment":"select","seed":5,"select":{"instances":4,"max_layers":4}})");
    ASSERT_EQ(run_cli("select --config " + (dir / "cfg.json").string() + " --out " + (dir / "first").string()), 0);
    ASSERT_EQ(run_cli("select --config " + (dir / "first" / "config.json").string() + " --out " +
                      (dir / "second").string()),
              0);
    EXPECT_EQ(slurp(dir / "first" / "results.csv"), slurp(dir / "second" / "results.csv"));
    const auto m1 = nlohmann::json::parse(slurp(dir / "first" / "manifest.json"));
    const auto m2 = nlohmann::json::parse(slurp(dir / "second" / "manifest.json"));
    EXPECT_EQ(m1["config_hash"], m2["config_hash"]);
}
