#include "roste/lab/commands.hpp"

#include "roste/errors.hpp"
#include "roste/hadamard.hpp"
#include "roste/lab/csv.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

namespace roste::lab {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kProp1Label = 0x70726F7031ULL;
constexpr std::uint64_t kPathLabel = 0x70617468ULL;
constexpr std::uint64_t kTaskLabel = 0x7461736BULL;
constexpr std::uint64_t kSelectLabel = 0x73656C656374ULL;
constexpr std::uint64_t kFwhtLabel = 0x66776874ULL;

std::string out_path(const ExperimentConfig& cfg, const std::string& name)
{
    return (fs::path(cfg.output_dir) / name).string();
}

void write_text(const std::string& path, const std::string& text)
{
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw std::runtime_error("cannot write '" + path + "'");
    f << text;
}

std::string rotation_string(const std::vector<RotationKind>& kinds)
{
    std::string s;
    for (auto k : kinds)
        s += k == RotationKind::identity ? 'I' : 'H';
    return s;
}

std::string rotation_string(const std::vector<RotationChoice>& rotations)
{
    std::vector<RotationKind> kinds;
    for (const auto& r : rotations)
        kinds.push_back(r.kind);
    return rotation_string(kinds);
}

QNetState build_net(const TaskParams& p, Rng& rng, bool outliers)
{
    QNetState net;
    const std::size_t n_layers = p.dims.size() - 1;
    for (std::size_t i = 0; i < n_layers; ++i) {
        LayerParams l;
        const std::size_t in = p.dims[i];
        const std::size_t out = p.dims[i + 1];
        l.weight = (1.0 / std::sqrt(static_cast<double>(in))) * gaussian(rng, in, out);
        if (outliers && i > 0 && p.outlier_channel < in)
            for (double& v : l.weight.row_span(p.outlier_channel))
                v *= p.outlier_magnitude;
        l.rotation = RotationChoice::identity(in);
        l.w_spec = QuantSpec{p.w_bits, p.mode, p.clip, p.w_grouping};
        l.x_spec = QuantSpec{p.x_bits, p.mode, p.clip, Grouping::per_row};
        l.activation = i + 1 < n_layers ? Activation::relu : Activation::none;
        net.layers.push_back(std::move(l));
    }
    return net;
}

json spec_to_json(const std::optional<QuantSpec>& s)
{
    if (!s)
        return nullptr;
    return json{{"bits", s->bits},
                {"mode", to_string(s->mode)},
                {"clip", s->clip},
                {"grouping", to_string(s->grouping)}};
}

std::optional<QuantSpec> spec_from_json(const json& j)
{
    if (j.is_null())
        return std::nullopt;
    QuantSpec s;
    s.bits = j.at("bits").get<int>();
    s.mode = parse_quant_mode(j.at("mode").get<std::string>());
    s.clip = j.at("clip").get<double>();
    s.grouping = parse_grouping(j.at("grouping").get<std::string>());
    return s;
}

json quantized_weight_json(const LayerParams& l)
{
    if (!l.w_spec)
        return nullptr;
    const Matrix rotated = fwht_apply(l.rotation, l.weight, Side::left_RT_W);
    // Output-channel-major, matching how Q_w groups weights.
    const Matrix oc_major = l.w_spec->grouping == Grouping::per_row ? transpose(rotated) : rotated;
    const QuantizedTensor q = quantize(oc_major, *l.w_spec);
    return json{{"layout", l.w_spec->grouping == Grouping::per_row ? "output_channel_major" : "in_out"},
                {"rows", q.rows},
                {"cols", q.cols},
                {"codes", q.codes},
                {"scale", q.scale},
                {"zero_point", q.zero_point},
                {"group_constant", q.group_constant}};
}

// Writes the full trajectory for a diverged run and reports exit code 3.
CommandResult divergence_result(const ExperimentConfig& cfg, const DivergenceError& e)
{
    CsvWriter csv({"step", "loss", "pred_error", "surrogate", "rotations"});
    for (const auto& p : e.trajectory().points)
        csv.row({static_cast<std::uint64_t>(p.step), p.loss, p.pred_error, p.surrogate, rotation_string(p.rotations)});
    csv.write(out_path(cfg, "divergence.csv"));
    CommandResult res;
    res.exit_code = kExitDivergence;
    res.summary.push_back(std::string("numerical divergence: ") + e.what());
    res.outputs.push_back("divergence.csv");
    return res;
}

} // namespace

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn)
{
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t workers = std::max<std::size_t>(1, std::min(threads, n));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < workers; ++t)
            pool.emplace_back(worker);
        for (auto& t : pool)
            t.join();
    }
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
}

Task make_task(const TaskParams& p, std::uint64_t seed)
{
    Rng teacher_rng(seed, 1);
    Rng noise_rng(seed, 2);
    Rng data_rng(seed, 3);
    const bool outliers = p.outlier_magnitude > 1.0;

    Task task;
    task.teacher = build_net(p, teacher_rng, outliers);
    task.pretrained = task.teacher;
    for (auto& l : task.pretrained.layers) {
        const double scale = p.pretrain_noise / std::sqrt(static_cast<double>(l.in_dim()));
        axpy(scale, gaussian(noise_rng, l.in_dim(), l.out_dim()), l.weight);
    }

    task.data.x = gaussian(data_rng, p.samples, p.dims.front());
    if (outliers)
        for (std::size_t n = 0; n < p.samples; ++n)
            task.data.x(n, p.outlier_channel) *= p.outlier_magnitude;

    const Matrix target = predict_full_precision(task.teacher, task.data.x);
    if (p.loss == LossKind::quadratic) {
        task.data.y = target;
    } else {
        task.data.y = Matrix(p.samples, 1);
        for (std::size_t n = 0; n < p.samples; ++n) {
            auto row = target.row_span(n);
            task.data.y(n, 0) = static_cast<double>(std::max_element(row.begin(), row.end()) - row.begin());
        }
    }
    task.pretrained.validate();
    return task;
}

SelectionInstance make_selection_instance(const SelectParams& p, std::uint64_t seed)
{
    Rng rng(seed, 0);
    const std::size_t span = p.max_layers - p.min_layers + 1;
    const std::size_t n_layers = p.min_layers + rng.below(span);
    const std::size_t w = p.width;
    const QuantSpec w_spec = QuantSpec::symmetric(p.w_bits, Grouping::per_row);
    const QuantSpec x_spec = QuantSpec::symmetric(p.x_bits, Grouping::per_row);
    const double top = static_cast<double>(w_spec.code_max());

    SelectionInstance inst;
    for (std::size_t i = 0; i < n_layers; ++i) {
        LayerParams l;
        l.rotation = RotationChoice::identity(w);
        l.w_spec = w_spec;
        l.x_spec = x_spec;
        l.activation = i + 1 < n_layers ? Activation::relu : Activation::none;
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(w));
        switch (rng.below(3)) {
        case 0: { // outlier rows: favours rotation
            l.weight = inv_sqrt * gaussian(rng, w, w);
            const double magnitude = 5.0 + 15.0 * rng.uniform();
            for (double& v : l.weight.row_span(rng.below(w)))
                v *= magnitude;
            break;
        }
        case 1: { // exactly on the per-channel grid: favours identity
            l.weight = Matrix(w, w);
            const double step = inv_sqrt * (0.5 + rng.uniform()) / top;
            for (std::size_t c = 0; c < w; ++c) {
                for (std::size_t r = 0; r < w; ++r)
                    l.weight(r, c) = step * static_cast<double>(static_cast<std::int64_t>(rng.below(15)) - 7) * top / 7.0;
                l.weight(rng.below(w), c) = step * top * rng.sign();
            }
            break;
        }
        default:
            l.weight = inv_sqrt * gaussian(rng, w, w);
            break;
        }
        // Stand-in for normalization layers: keep activation energy roughly constant with depth.
        l.weight = std::sqrt(static_cast<double>(w) / frobenius_sq(l.weight)) * l.weight;
        inst.net.layers.push_back(std::move(l));
    }
    inst.calib = gaussian(rng, p.calib_n, w);
    if (rng.uniform() < 0.5) {
        const std::size_t channel = rng.below(w);
        const double magnitude = 5.0 + 15.0 * rng.uniform();
        for (std::size_t n = 0; n < p.calib_n; ++n)
            inst.calib(n, channel) *= magnitude;
    }
    inst.net.validate();
    return inst;
}

json dump_state(const TrainerState& state)
{
    json layers = json::array();
    for (const auto& l : state.net.layers) {
        layers.push_back(json{
            {"in_dim", l.in_dim()},
            {"out_dim", l.out_dim()},
            {"activation", to_string(l.activation)},
            {"rotation",
             {{"kind", to_string(l.rotation.kind)},
              {"dim", l.rotation.dim},
              {"sign_seed", std::to_string(l.rotation.sign_seed)}}},
            {"w_spec", spec_to_json(l.w_spec)},
            {"x_spec", spec_to_json(l.x_spec)},
            {"weight", std::vector<double>(l.weight.data().begin(), l.weight.data().end())},
            {"quantized_weight", quantized_weight_json(l)},
        });
    }
    json velocity = json::array();
    for (const auto& v : state.velocity)
        velocity.push_back(std::vector<double>(v.data().begin(), v.data().end()));
    return json{{"format", "roste-model"},
                {"version", 1},
                {"step", state.step},
                {"round", state.round},
                {"layers", layers},
                {"velocity", velocity}};
}

TrainerState load_state(const json& j)
{
    try {
        if (j.at("format").get<std::string>() != "roste-model" || j.at("version").get<int>() != 1)
            throw ConfigError("model dump: unsupported format or version");
        TrainerState state;
        state.step = j.at("step").get<std::size_t>();
        state.round = j.at("round").get<std::size_t>();
        for (const auto& lj : j.at("layers")) {
            LayerParams l;
            const auto in = lj.at("in_dim").get<std::size_t>();
            const auto out = lj.at("out_dim").get<std::size_t>();
            l.weight = Matrix(in, out, lj.at("weight").get<std::vector<double>>());
            const auto& rj = lj.at("rotation");
            l.rotation.kind = parse_rotation_kind(rj.at("kind").get<std::string>());
            l.rotation.dim = rj.at("dim").get<std::size_t>();
            l.rotation.sign_seed = std::stoull(rj.at("sign_seed").get<std::string>());
            l.w_spec = spec_from_json(lj.at("w_spec"));
            l.x_spec = spec_from_json(lj.at("x_spec"));
            l.activation = parse_activation(lj.at("activation").get<std::string>());
            state.net.layers.push_back(std::move(l));
        }
        const auto& vel = j.at("velocity");
        for (std::size_t i = 0; i < vel.size(); ++i) {
            const auto& w = state.net.layers.at(i).weight;
            state.velocity.emplace_back(w.rows(), w.cols(), vel[i].get<std::vector<double>>());
        }
        state.net.validate();
        return state;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model dump: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("model dump: ") + e.what());
    }
}

TrainerState load_state_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open model dump '" + path + "'");
    try {
        return load_state(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ConfigError("model dump '" + path + "': " + e.what());
    }
}

CommandResult cmd_prop1(const ExperimentConfig& cfg)
{
    const auto& p = cfg.prop1;
    struct Cell {
        WeightDistribution dist;
        std::size_t d;
        int bits;
    };
    std::vector<Cell> grid;
    for (auto dist : p.distributions)
        for (std::size_t d : p.dims)
            for (int b : p.bits)
                grid.push_back({dist, d, b});

    std::vector<Prop1Report> reports(grid.size());
    parallel_for(grid.size(), cfg.threads, [&](std::size_t i) {
        Rng rng(derive_seed(cfg.seed, kProp1Label), i);
        reports[i] = check_prop1(grid[i].d, grid[i].bits, p.trials, p.delta, rng, grid[i].dist);
    });

    CommandResult res;
    CsvWriter csv({"d", "b_w", "trials", "delta", "eq16_violations", "eq17_violation_frac", "mean_err_identity",
                   "mean_err_rotated", "distribution"});
    std::size_t failures = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto& r = reports[i];
        csv.row({static_cast<std::uint64_t>(r.d), static_cast<std::int64_t>(r.bits),
                 static_cast<std::uint64_t>(r.trials), r.delta, static_cast<std::uint64_t>(r.eq16_violations),
                 r.eq17_violation_frac, r.mean_err_identity, r.mean_err_rotated, to_string(grid[i].dist)});
        const bool ok = r.eq16_violations == 0 && r.eq17_violation_frac <= r.delta + p.slack;
        if (!ok) {
            ++failures;
            res.summary.push_back("FAIL d=" + std::to_string(r.d) + " b_w=" + std::to_string(r.bits) + " " +
                                  to_string(grid[i].dist) + ": eq16_violations=" +
                                  std::to_string(r.eq16_violations) +
                                  " eq17_violation_frac=" + format_double(r.eq17_violation_frac));
        }
    }
    csv.write(out_path(cfg, "results.csv"));
    res.outputs.push_back("results.csv");
    res.summary.push_back("prop1: " + std::to_string(grid.size() - failures) + "/" + std::to_string(grid.size()) +
                          " grid cells within bounds");
    res.exit_code = failures ? kExitAssertion : kExitOk;
    return res;
}

CommandResult cmd_theorem1(const ExperimentConfig& cfg)
{
    const auto& p = cfg.theorem1;
    const QuantSpec w_spec = QuantSpec::symmetric(p.w_bits, Grouping::per_row);
    const std::array<RotationKind, 2> kinds = {RotationKind::hadamard, RotationKind::identity};
    std::array<Theorem1Setup, 2> setups;
    for (std::size_t k = 0; k < 2; ++k)
        setups[k] = build_theorem1_setup(p.d, p.x_bits, kinds[k], p.outliers, p.data_count, cfg.seed);

    // Paired seeds: the rotated and unrotated runs share data and sampling paths.
    std::array<std::vector<Theorem1Path>, 2> paths;
    paths[0].resize(p.seeds);
    paths[1].resize(p.seeds);
    try {
        parallel_for(2 * p.seeds, cfg.threads, [&](std::size_t job) {
            const std::size_t k = job / p.seeds;
            const std::size_t s = job % p.seeds;
            paths[k][s] =
                run_theorem1_path(setups[k], w_spec, p.T, derive_seed(derive_seed(cfg.seed, kPathLabel), s), p.log_every);
        });
    } catch (const DivergenceError& e) {
        return divergence_result(cfg, e);
    }

    const Theorem1Report rot = verify_theorem1_bound(setups[0], paths[0], p.slack);
    const Theorem1Report id = verify_theorem1_bound(setups[1], paths[1], p.slack);

    CsvWriter csv({"step", "lhs_rotated", "rhs_rotated", "floor_rotated", "lhs_identity", "rhs_identity",
                   "floor_identity"});
    for (std::size_t i = 0; i < rot.steps.size(); ++i)
        csv.row({static_cast<std::uint64_t>(rot.steps[i]), rot.lhs[i], rot.rhs[i], rot.floor_term[i], id.lhs[i],
                 id.rhs[i], id.floor_term[i]});
    csv.write(out_path(cfg, "results.csv"));

    CsvWriter summary({"rotation", "lambda_min", "rho", "mu", "eta", "violations", "initial_lhs", "final_lhs",
                       "decay_orders"});
    for (std::size_t k = 0; k < 2; ++k) {
        const Theorem1Report& r = k == 0 ? rot : id;
        summary.row({to_string(kinds[k]), setups[k].lambda_min, setups[k].rho, setups[k].mu, setups[k].eta,
                     static_cast<std::uint64_t>(r.violations), r.initial, r.final_lhs,
                     std::log10(r.initial / r.final_lhs)});
    }
    summary.write(out_path(cfg, "summary.csv"));

    CommandResult res;
    res.outputs = {"results.csv", "summary.csv"};
    bool ok = rot.violations == 0 && id.violations == 0;
    res.summary.push_back("theorem1: bound violations rotated=" + std::to_string(rot.violations) +
                          " identity=" + std::to_string(id.violations) + " over " + std::to_string(rot.steps.size()) +
                          " logged steps, " + std::to_string(p.seeds) + " seeds");
    const double ratio = rot.final_lhs / id.final_lhs;
    res.summary.push_back("theorem1: final quantized prediction error rotated=" + format_double(rot.final_lhs) +
                          " identity=" + format_double(id.final_lhs) + " ratio=" + format_double(ratio));
    if (p.expect_ratio_max && !(ratio <= *p.expect_ratio_max)) {
        ok = false;
        res.summary.push_back("FAIL rotation benefit: ratio " + format_double(ratio) + " > " +
                              format_double(*p.expect_ratio_max));
    }
    if (p.expect_decay_orders) {
        for (const Theorem1Report* r : {&rot, &id}) {
            const double orders = std::log10(r->initial / r->final_lhs);
            if (!(orders >= *p.expect_decay_orders)) {
                ok = false;
                res.summary.push_back("FAIL decay: " + format_double(orders) + " orders < " +
                                      format_double(*p.expect_decay_orders));
            }
        }
    }
    res.exit_code = ok ? kExitOk : kExitAssertion;
    return res;
}

CommandResult cmd_fig4(const ExperimentConfig& cfg)
{
    const auto& p = cfg.fig4;
    struct SeedRun {
        std::vector<std::size_t> steps;
        std::vector<double> e_ste;
        std::vector<double> e_roste;
        std::string rotations;
    };
    std::vector<SeedRun> runs(p.seeds);
    try {
        parallel_for(p.seeds, cfg.threads, [&](std::size_t s) {
            const std::uint64_t seed = derive_seed(derive_seed(cfg.seed, kTaskLabel), s);
            const Task task = make_task(p.task, seed);
            RosteConfig rc = cfg.roste;
            rc.seed = seed;
            RosteConfig ste_cfg = rc;
            ste_cfg.selection = SelectionMode::identity;
            const RosteResult ste = run_roste(task.pretrained, task.data, ste_cfg, p.task.loss);
            const RosteResult ro = run_roste(task.pretrained, task.data, rc, p.task.loss);
            SeedRun& out = runs[s];
            for (std::size_t k = 0; k < ste.rounds.size(); ++k) {
                const auto& a = ste.rounds[k].trajectory.points;
                const auto& b = ro.rounds[k].trajectory.points;
                for (std::size_t i = 0; i < a.size(); ++i) {
                    out.steps.push_back(a[i].step);
                    out.e_ste.push_back(a[i].surrogate);
                    out.e_roste.push_back(b[i].surrogate);
                }
                out.rotations += (k ? "," : "") + rotation_string(ro.rounds[k].rotations);
            }
        });
    } catch (const DivergenceError& e) {
        return divergence_result(cfg, e);
    }

    CsvWriter per_seed({"seed", "step", "e_ste", "e_roste"});
    std::size_t passing = 0;
    for (std::size_t s = 0; s < runs.size(); ++s) {
        bool below = true;
        for (std::size_t i = 0; i < runs[s].steps.size(); ++i) {
            per_seed.row({static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(runs[s].steps[i]),
                          runs[s].e_ste[i], runs[s].e_roste[i]});
            if (runs[s].steps[i] > p.warmup && !(runs[s].e_roste[i] < runs[s].e_ste[i]))
                below = false;
        }
        if (below)
            ++passing;
    }
    per_seed.write(out_path(cfg, "per_seed.csv"));

    CsvWriter csv({"step", "e_ste", "e_roste"});
    const std::size_t n_points = runs.front().steps.size();
    for (std::size_t i = 0; i < n_points; ++i) {
        double a = 0.0;
        double b = 0.0;
        for (const auto& r : runs) {
            a += r.e_ste[i];
            b += r.e_roste[i];
        }
        const auto n = static_cast<double>(runs.size());
        csv.row({static_cast<std::uint64_t>(runs.front().steps[i]), a / n, b / n});
    }
    csv.write(out_path(cfg, "results.csv"));

    CommandResult res;
    res.outputs = {"results.csv", "per_seed.csv"};
    const double fraction = static_cast<double>(passing) / static_cast<double>(runs.size());
    res.summary.push_back("fig4: RoSTE surrogate below STE after step " + std::to_string(p.warmup) + " in " +
                          std::to_string(passing) + "/" + std::to_string(runs.size()) + " seeds; seed 0 rotations " +
                          runs.front().rotations);
    if (p.expect_roste_below && fraction < p.min_pass_fraction) {
        res.summary.push_back("FAIL fig4: pass fraction " + format_double(fraction) + " < " +
                              format_double(p.min_pass_fraction));
        res.exit_code = kExitAssertion;
    }
    return res;
}

CommandResult cmd_train(const ExperimentConfig& cfg)
{
    const auto& p = cfg.train;
    const std::uint64_t seed = cfg.seed;
    const Task task = make_task(p.task, seed);
    RosteConfig rc = cfg.roste;
    rc.seed = seed;

    CsvWriter csv({"round", "step", "loss", "pred_error", "surrogate", "rotations"});
    TrainerState final_state;
    try {
        if (!p.resume_from.empty()) {
            TrainerState state = load_state_file(p.resume_from);
            if (state.net.in_dim() != task.pretrained.in_dim() || state.net.out_dim() != task.pretrained.out_dim() ||
                state.net.layers.size() != task.pretrained.layers.size())
                throw ConfigError("model dump does not match the task architecture");
            StageOptions opts;
            opts.log_initial = false;
            const TrainTrajectory traj = qat_stage(state, task.data, rc, p.task.loss, opts);
            for (const auto& pt : traj.points)
                csv.row({static_cast<std::uint64_t>(state.round), static_cast<std::uint64_t>(pt.step), pt.loss,
                         pt.pred_error, pt.surrogate, rotation_string(pt.rotations)});
            final_state = std::move(state);
        } else {
            RosteResult result = run_roste(task.pretrained, task.data, rc, p.task.loss);
            for (std::size_t k = 0; k < result.rounds.size(); ++k)
                for (const auto& pt : result.rounds[k].trajectory.points)
                    csv.row({static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(pt.step), pt.loss,
                             pt.pred_error, pt.surrogate, rotation_string(pt.rotations)});
            final_state = std::move(result.state);
        }
    } catch (const DivergenceError& e) {
        return divergence_result(cfg, e);
    }
    csv.write(out_path(cfg, "results.csv"));
    write_text(out_path(cfg, "model.json"), dump_state(final_state).dump(1) + "\n");

    CommandResult res;
    res.outputs = {"results.csv", "model.json"};
    res.summary.push_back("train: " + std::to_string(final_state.step) + " steps, rotations " +
                          rotation_string(final_state.net.rotations()) + ", final quantized prediction error " +
                          format_double(p.task.loss == LossKind::quadratic
                                            ? prediction_error_quantized(final_state.net, task.data.x, task.data.y)
                                            : classification_error(final_state.net, task.data.x, task.data.y)));
    return res;
}

CommandResult cmd_select(const ExperimentConfig& cfg)
{
    const auto& p = cfg.select;
    struct Outcome {
        std::size_t layers = 0;
        double e_identity = 0.0;
        double e_hadamard = 0.0;
        double e_layerwise = 0.0;
        double e_exhaustive = 0.0;
        std::string layerwise;
        std::string exhaustive;
    };
    std::vector<Outcome> outcomes(p.instances);
    parallel_for(p.instances, cfg.threads, [&](std::size_t i) {
        const std::uint64_t seed = derive_seed(derive_seed(cfg.seed, kSelectLabel), i);
        const SelectionInstance inst = make_selection_instance(p, seed);
        const Selection lw = select_rotations(inst.net, inst.calib, SelectionMode::layerwise, seed);
        const Selection ex = select_rotations(inst.net, inst.calib, SelectionMode::exhaustive, seed);
        std::vector<RotationChoice> all_h;
        for (std::size_t l = 0; l < inst.net.layers.size(); ++l)
            all_h.push_back(candidate_rotation(inst.net.layers[l].in_dim(), seed, l));
        Outcome& o = outcomes[i];
        o.layers = inst.net.layers.size();
        o.e_identity = select_rotations(inst.net, inst.calib, SelectionMode::identity, seed).surrogate.total;
        o.e_hadamard = surrogate_error(inst.net, all_h, inst.calib).total;
        o.e_layerwise = lw.surrogate.total;
        o.e_exhaustive = ex.surrogate.total;
        o.layerwise = rotation_string(lw.rotations);
        o.exhaustive = rotation_string(ex.rotations);
    });

    CsvWriter csv({"instance", "layers", "e_identity", "e_hadamard", "e_layerwise", "e_exhaustive", "rel_gap",
                   "within_tolerance", "layerwise", "exhaustive"});
    std::size_t within = 0;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        const auto& o = outcomes[i];
        const double gap = o.e_exhaustive > 0.0 ? (o.e_layerwise - o.e_exhaustive) / o.e_exhaustive
                                                : (o.e_layerwise > 0.0 ? INFINITY : 0.0);
        const bool ok = o.e_layerwise <= (1.0 + p.tolerance) * o.e_exhaustive;
        within += ok ? 1 : 0;
        csv.row({static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(o.layers), o.e_identity, o.e_hadamard,
                 o.e_layerwise, o.e_exhaustive, gap, std::string(ok ? "1" : "0"), o.layerwise, o.exhaustive});
    }
    csv.write(out_path(cfg, "results.csv"));

    CommandResult res;
    res.outputs = {"results.csv"};
    const double fraction = static_cast<double>(within) / static_cast<double>(outcomes.size());
    res.summary.push_back("select: layerwise within " + format_double(100.0 * p.tolerance) +
                          "% of the exhaustive optimum in " + std::to_string(within) + "/" +
                          std::to_string(outcomes.size()) + " instances");
    if (fraction < p.min_fraction) {
        res.summary.push_back("FAIL select: fraction " + format_double(fraction) + " < " +
                              format_double(p.min_fraction));
        res.exit_code = kExitAssertion;
    }
    return res;
}

CommandResult cmd_fwht_check(const ExperimentConfig& cfg)
{
    const auto& p = cfg.fwht_check;
    CsvWriter csv({"d", "vectors", "max_err_right", "max_err_left", "max_err_roundtrip", "pass"});
    CommandResult res;
    std::size_t failures = 0;
    for (std::size_t i = 0; i < p.dims.size(); ++i) {
        const std::size_t d = p.dims[i];
        // Throws UnsupportedDimension for non-power-of-two d; surfaced as a config error.
        const RotationChoice rc = RotationChoice::hadamard(d, derive_seed(cfg.seed, d));
        Rng rng(derive_seed(cfg.seed, kFwhtLabel), d);
        const Matrix x = gaussian(rng, p.vectors, d);
        const Matrix r = materialize(rc);
        const double err_right = max_abs_diff(fwht_apply(rc, x, Side::right_XR), matmul(x, r));
        const Matrix w = transpose(x);
        const double err_left = max_abs_diff(fwht_apply(rc, w, Side::left_RT_W), matmul_tn(r, w));
        const double err_round =
            max_abs_diff(fwht_apply_inverse(rc, fwht_apply(rc, x, Side::right_XR), Side::right_XR), x);
        const bool ok = std::max({err_right, err_left, err_round}) <= p.tolerance;
        failures += ok ? 0 : 1;
        csv.row({static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(p.vectors), err_right, err_left, err_round,
                 std::string(ok ? "1" : "0")});
    }
    csv.write(out_path(cfg, "results.csv"));
    res.outputs = {"results.csv"};
    res.summary.push_back("fwht-check: " + std::to_string(p.dims.size() - failures) + "/" +
                          std::to_string(p.dims.size()) + " dimensions within " + format_double(p.tolerance));
    res.exit_code = failures ? kExitAssertion : kExitOk;
    return res;
}

CommandResult run_experiment(const ExperimentConfig& cfg)
{
    const auto start = std::chrono::steady_clock::now();
    CommandResult res;
    try {
        cfg.validate();
        fs::create_directories(cfg.output_dir);
        write_text(out_path(cfg, "config.json"), to_json(cfg).dump(2) + "\n");
        switch (cfg.experiment) {
        case Experiment::prop1:
            res = cmd_prop1(cfg);
            break;
        case Experiment::theorem1:
            res = cmd_theorem1(cfg);
            break;
        case Experiment::fig4:
            res = cmd_fig4(cfg);
            break;
        case Experiment::train:
            res = cmd_train(cfg);
            break;
        case Experiment::select:
            res = cmd_select(cfg);
            break;
        case Experiment::fwht_check:
            res = cmd_fwht_check(cfg);
            break;
        }
    } catch (const ConfigError& e) {
        res = {};
        res.exit_code = kExitConfig;
        res.summary.push_back(std::string("configuration error: ") + e.what());
    } catch (const UnsupportedDimension& e) {
        res = {};
        res.exit_code = kExitConfig;
        res.summary.push_back(std::string("unsupported dimension: ") + e.what());
    } catch (const DivergenceError& e) {
        res = divergence_result(cfg, e);
    }
    if (!fs::is_directory(cfg.output_dir))
        return res;

    res.outputs.insert(res.outputs.begin(), "config.json");
    const auto elapsed =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
    json manifest{{"config_hash", config_hash(cfg)},
                  {"artifact_version", kArtifactVersion},
                  {"experiment", to_string(cfg.experiment)},
                  {"seed", cfg.seed},
                  {"duration_ms", elapsed},
                  {"exit_code", res.exit_code},
                  {"outputs", res.outputs}};
    write_text(out_path(cfg, "manifest.json"), manifest.dump(2) + "\n");
    res.outputs.push_back("manifest.json");
    return res;
}

} // namespace roste::lab
