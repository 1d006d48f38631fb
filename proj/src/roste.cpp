#include "roste/roste.hpp"

#include "roste/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

namespace roste {

namespace {

constexpr std::uint64_t kCalibLabel = 0x63616C6962ULL; // "calib"
constexpr std::uint64_t kBatchLabel = 0x6261746368ULL; // "batch"
constexpr std::uint64_t kInputLabel = 0x696E707574ULL; // "input"
constexpr std::uint64_t kTargetLabel = 0x7773746172ULL; // "wstar"

void apply_activation(Matrix& m, Activation a)
{
    if (a == Activation::relu)
        for (double& v : m.data())
            v = v > 0.0 ? v : 0.0;
}

std::vector<RotationKind> kinds_of(const QNetState& net)
{
    std::vector<RotationKind> out;
    for (const auto& l : net.layers)
        out.push_back(l.rotation.kind);
    return out;
}

// Per-layer contribution to E for one rotation, plus the next layer's input.
struct LayerEval {
    double weight_term = 0.0;
    double activation_term = 0.0;
    Matrix next;
};

LayerEval evaluate_layer(const LayerParams& layer, const RotationChoice& rc, const Matrix& act,
                         CalibPrecision precision)
{
    LayerEval ev;
    const Matrix rotated_w = fwht_apply(rc, layer.weight, Side::left_RT_W);
    const Matrix q_w = quantize_weight(rotated_w, layer.w_spec);
    ev.weight_term = frobenius_sq(q_w - rotated_w);

    const Matrix rotated_x = fwht_apply(rc, act, Side::right_XR);
    const Matrix q_x = quantize_activation(rotated_x, layer.x_spec);
    ev.activation_term = frobenius_sq(q_x - rotated_x) / static_cast<double>(act.rows());

    ev.next = precision == CalibPrecision::quantized ? matmul(q_x, q_w) : matmul(act, layer.weight);
    apply_activation(ev.next, layer.activation);
    return ev;
}

struct ExhaustiveSearch {
    const QNetState& net;
    const std::vector<RotationChoice>& candidates;
    CalibPrecision precision;
    std::vector<int> current;
    std::vector<int> best;
    double best_total = std::numeric_limits<double>::infinity();
    int best_count = 0;

    void visit(std::size_t layer, const Matrix& act, double partial, int rotated_count)
    {
        if (layer == net.layers.size()) {
            if (partial < best_total || (partial == best_total && rotated_count < best_count)) {
                best_total = partial;
                best_count = rotated_count;
                best = current;
            }
            return;
        }
        const RotationChoice ident = RotationChoice::identity(net.layers[layer].in_dim());
        for (int choice = 0; choice < 2; ++choice) {
            if (choice == 1 && candidates[layer].is_identity())
                continue;
            const RotationChoice& rc = choice ? candidates[layer] : ident;
            LayerEval ev = evaluate_layer(net.layers[layer], rc, act, precision);
            current[layer] = choice;
            visit(layer + 1, ev.next, partial + ev.weight_term + ev.activation_term, rotated_count + choice);
        }
    }
};

} // namespace

void RosteConfig::validate(std::size_t layer_count) const
{
    if (K < 1)
        throw ConfigError("RosteConfig: K must be >= 1");
    if (T < 1)
        throw ConfigError("RosteConfig: T must be >= 1");
    if (calib_n < 1)
        throw ConfigError("RosteConfig: calib_n must be >= 1");
    if (batch < 1)
        throw ConfigError("RosteConfig: batch must be >= 1");
    if (eta && !(std::isfinite(*eta) && *eta >= 0.0))
        throw ConfigError("RosteConfig: eta must be finite and non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0))
        throw ConfigError("RosteConfig: momentum must lie in [0, 1)");
    if (selection == SelectionMode::exhaustive && layer_count > kMaxExhaustiveLayers)
        throw ConfigError("RosteConfig: exhaustive selection supports at most 20 layers");
}

std::size_t RosteConfig::resolved_log_every() const noexcept
{
    return log_every ? log_every : std::max<std::size_t>(1, T / 200);
}

SurrogateReport surrogate_error(const QNetState& net, const std::vector<RotationChoice>& rotations,
                                const Matrix& calib, CalibPrecision precision)
{
    if (calib.rows() == 0)
        throw UsageError("surrogate_error: empty calibration set");
    if (rotations.size() != net.layers.size())
        throw ShapeError("surrogate_error: expected one rotation per layer");
    if (calib.cols() != net.in_dim())
        throw ShapeError("surrogate_error: calibration width does not match the network input");
    SurrogateReport rep;
    Matrix act = calib;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        if (rotations[i].dim != net.layers[i].in_dim())
            throw ShapeError("surrogate_error: rotation " + std::to_string(i) + " has the wrong dimension");
        LayerEval ev = evaluate_layer(net.layers[i], rotations[i], act, precision);
        rep.weight_terms.push_back(ev.weight_term);
        rep.activation_terms.push_back(ev.activation_term);
        rep.total += ev.weight_term + ev.activation_term;
        act = std::move(ev.next);
    }
    return rep;
}

RotationChoice candidate_rotation(std::size_t in_dim, std::uint64_t seed, std::size_t layer_index)
{
    if (in_dim < 2 || !is_power_of_two(in_dim))
        return RotationChoice::identity(in_dim);
    return RotationChoice::hadamard(in_dim, layer_sign_seed(seed, layer_index));
}

Selection select_rotations(const QNetState& net, const Matrix& calib, SelectionMode mode, std::uint64_t seed,
                           CalibPrecision precision)
{
    net.validate();
    if (calib.rows() == 0)
        throw UsageError("select_rotations: empty calibration set");
    const std::size_t n_layers = net.layers.size();

    std::vector<RotationChoice> identity_cfg;
    std::vector<RotationChoice> candidates;
    for (std::size_t i = 0; i < n_layers; ++i) {
        identity_cfg.push_back(RotationChoice::identity(net.layers[i].in_dim()));
        candidates.push_back(candidate_rotation(net.layers[i].in_dim(), seed, i));
    }

    Selection sel;
    switch (mode) {
    case SelectionMode::identity:
        sel.rotations = identity_cfg;
        break;
    case SelectionMode::layerwise: {
        const SurrogateReport e_id = surrogate_error(net, identity_cfg, calib, precision);
        const SurrogateReport e_h = surrogate_error(net, candidates, calib, precision);
        for (std::size_t i = 0; i < n_layers; ++i)
            sel.rotations.push_back(e_h.layer_term(i) < e_id.layer_term(i) ? candidates[i] : identity_cfg[i]);
        break;
    }
    case SelectionMode::exhaustive: {
        if (n_layers > kMaxExhaustiveLayers)
            throw UsageError("select_rotations: exhaustive search refused for " + std::to_string(n_layers) +
                             " layers (limit 20)");
        ExhaustiveSearch search{net, candidates, precision, std::vector<int>(n_layers, 0), {}};
        search.visit(0, calib, 0.0, 0);
        for (std::size_t i = 0; i < n_layers; ++i)
            sel.rotations.push_back(search.best[i] ? candidates[i] : identity_cfg[i]);
        break;
    }
    }
    sel.surrogate = surrogate_error(net, sel.rotations, calib, precision);
    return sel;
}

Matrix draw_calibration(const Dataset& data, std::size_t calib_n, std::uint64_t seed, std::size_t round)
{
    const std::size_t n = data.size();
    if (n == 0)
        throw UsageError("draw_calibration: empty dataset");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const std::size_t take = std::min(calib_n, n);
    Rng rng(derive_seed(seed, kCalibLabel), round);
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < take; ++i)
        std::swap(idx[i], idx[i + rng.below(n - i)]);
    idx.resize(take);
    return gather_rows(data.x, idx);
}

std::vector<std::size_t> draw_minibatch(std::size_t data_size, std::size_t batch, std::uint64_t seed,
                                        std::size_t step)
{
    Rng rng(derive_seed(seed, kBatchLabel), step);
    std::vector<std::size_t> idx(batch);
    for (auto& i : idx)
        i = rng.below(data_size);
    return idx;
}

TrainTrajectory qat_stage(TrainerState& state, const Dataset& data, const RosteConfig& config, LossKind loss,
                          const StageOptions& options)
{
    QNetState& net = state.net;
    net.validate();
    config.validate(net.layers.size());
    if (!config.eta)
        throw ConfigError("qat_stage: eta is 'auto'; resolve it from a Theorem-1 setup first");
    if (data.size() == 0)
        throw UsageError("qat_stage: empty dataset");
    const double eta = *config.eta;
    const std::size_t log_every = config.resolved_log_every();
    const Matrix calib = draw_calibration(data, config.calib_n, config.seed, state.round);
    const std::vector<RotationChoice> rotations = net.rotations();

    TrainTrajectory traj;
    auto log_point = [&](std::size_t step) {
        TrajectoryPoint p;
        p.step = step;
        p.loss = loss_value(predict(net, data.x), data.y, loss);
        p.pred_error = loss == LossKind::quadratic ? prediction_error_quantized(net, data.x, data.y)
                                                   : classification_error(net, data.x, data.y);
        p.surrogate = surrogate_error(net, rotations, calib, config.calib_precision).total;
        p.rotations = kinds_of(net);
        traj.points.push_back(std::move(p));
        if (!std::isfinite(traj.points.back().loss) || traj.points.back().loss > kDivergenceThreshold)
            throw DivergenceError("qat_stage: divergence at step " + std::to_string(step), traj);
    };

    if (config.momentum > 0.0 && state.velocity.size() != net.layers.size()) {
        state.velocity.clear();
        for (const auto& l : net.layers)
            state.velocity.emplace_back(l.weight.rows(), l.weight.cols());
    }

    if (options.log_initial)
        log_point(state.step);
    if (options.observer)
        options.observer(state.step, net);

    const std::size_t end = state.step + config.T;
    while (state.step < end) {
        const auto idx = draw_minibatch(data.size(), config.batch, config.seed, state.step);
        const Matrix bx = gather_rows(data.x, idx);
        const Matrix by = gather_rows(data.y, idx);
        LossAndGrad lg = loss_and_grad(net, bx, by, loss);
        if (!std::isfinite(lg.loss) || lg.loss > kDivergenceThreshold)
            throw DivergenceError("qat_stage: minibatch loss diverged at step " + std::to_string(state.step), traj);
        for (std::size_t i = 0; i < net.layers.size(); ++i) {
            if (config.momentum > 0.0) {
                Matrix& v = state.velocity[i];
                for (double& x : v.data())
                    x *= config.momentum;
                axpy(1.0, lg.grads[i], v);
                axpy(-eta, v, net.layers[i].weight);
            } else {
                axpy(-eta, lg.grads[i], net.layers[i].weight);
            }
        }
        ++state.step;
        if (options.observer)
            options.observer(state.step, net);
        if (state.step % log_every == 0 || state.step == end)
            log_point(state.step);
    }
    return traj;
}

std::pair<QNetState, TrainTrajectory> qat_stage(const QNetState& net, const std::vector<RotationChoice>& rotations,
                                                const Dataset& data, const RosteConfig& config, LossKind loss)
{
    TrainerState state;
    state.net = net;
    state.net.set_rotations(rotations);
    TrainTrajectory traj = qat_stage(state, data, config, loss);
    return {std::move(state.net), std::move(traj)};
}

RosteResult run_roste(const QNetState& pretrained, const Dataset& data, const RosteConfig& config, LossKind loss)
{
    pretrained.validate();
    config.validate(pretrained.layers.size());
    RosteResult res;
    res.state.net = pretrained;
    for (std::size_t k = 0; k < config.K; ++k) {
        res.state.round = k;
        const Matrix calib = draw_calibration(data, config.calib_n, config.seed, k);
        Selection sel = select_rotations(res.state.net, calib, config.selection, config.seed, config.calib_precision);
        res.state.net.set_rotations(sel.rotations);
        RoundRecord rec;
        rec.rotations = sel.rotations;
        rec.selection_surrogate = std::move(sel.surrogate);
        rec.trajectory = qat_stage(res.state, data, config, loss);
        res.rounds.push_back(std::move(rec));
    }
    return res;
}

QNetState Theorem1Setup::model(const QuantSpec& w_spec, const Matrix& w0) const
{
    QNetState net;
    LayerParams l;
    l.weight = w0;
    l.rotation = rotation;
    l.w_spec = w_spec;
    l.x_spec = x_spec;
    l.activation = Activation::none;
    net.layers.push_back(std::move(l));
    net.validate();
    return net;
}

double Theorem1Setup::gram_norm_sq(const Matrix& v) const
{
    return quadratic_form(gram, v.data());
}

Theorem1Setup build_theorem1_setup(std::size_t d, int x_bits, RotationKind rotation, const OutlierProfile& outliers,
                                   std::size_t data_count, std::uint64_t seed)
{
    if (d == 0 || data_count == 0)
        throw DomainError("build_theorem1_setup: d and data_count must be positive");
    if (outliers.coordinate >= d)
        throw DomainError("build_theorem1_setup: outlier coordinate out of range");

    Theorem1Setup s;
    s.d = d;
    s.rotation = rotation == RotationKind::hadamard ? RotationChoice::hadamard(d, layer_sign_seed(seed, 0))
                                                    : RotationChoice::identity(d);
    s.x_spec = QuantSpec::symmetric(x_bits, Grouping::per_row, 1.0);
    s.x_spec.validate();

    Rng input_rng(seed, kInputLabel);
    Rng target_rng(seed, kTargetLabel);
    s.data.x = gaussian(input_rng, data_count, d);
    if (outliers.on_inputs)
        for (std::size_t n = 0; n < data_count; ++n)
            s.data.x(n, outliers.coordinate) *= outliers.magnitude;
    s.w_star_model = gaussian(target_rng, d, 1);
    if (outliers.on_weights)
        s.w_star_model(outliers.coordinate, 0) *= outliers.magnitude;

    s.features = quantize_activation(fwht_apply(s.rotation, s.data.x, Side::right_XR), s.x_spec);
    s.w_star = fwht_apply(s.rotation, s.w_star_model, Side::left_RT_W);
    s.data.y = matmul(s.features, s.w_star);

    s.gram = (1.0 / static_cast<double>(data_count)) * matmul_tn(s.features, s.features);
    const std::vector<double> ev = symmetric_eigenvalues(s.gram);
    const double largest = ev.back();
    if (!(largest > 0.0))
        throw DomainError("build_theorem1_setup: degenerate Gram matrix (all-zero features)");
    s.lambda_min = largest;
    for (double v : ev) {
        if (v > 1e-10 * largest) {
            s.lambda_min = v;
            break;
        }
    }
    for (std::size_t n = 0; n < data_count; ++n)
        s.rho = std::max(s.rho, quadratic_form(s.gram, s.features.row_span(n)));
    s.mu = s.lambda_min * s.lambda_min / (12.0 * s.rho);
    s.eta = s.lambda_min / (6.0 * s.rho);

    std::uint64_t h = derive_seed(seed, d);
    h = derive_seed(h, static_cast<std::uint64_t>(x_bits));
    h = derive_seed(h, static_cast<std::uint64_t>(rotation));
    h = derive_seed(h, data_count);
    h = derive_seed(h, std::bit_cast<std::uint64_t>(outliers.magnitude));
    h = derive_seed(h, (outliers.on_weights ? 1u : 0u) | (outliers.on_inputs ? 2u : 0u));
    s.id = derive_seed(h, outliers.coordinate);
    return s;
}

Theorem1Path run_theorem1_path(const Theorem1Setup& setup, const QuantSpec& w_spec, std::size_t T,
                               std::uint64_t path_seed, std::size_t log_every)
{
    TrainerState state;
    state.net = setup.model(w_spec, Matrix(setup.d, 1));

    RosteConfig cfg;
    cfg.K = 1;
    cfg.T = T;
    cfg.eta = setup.eta;
    cfg.batch = 1;
    cfg.seed = path_seed;
    cfg.calib_n = 128;
    cfg.selection = SelectionMode::identity;
    cfg.log_every = log_every;

    Theorem1Path path;
    path.setup_id = setup.id;
    path.e_norm.reserve(T + 1);
    StageOptions opts;
    opts.observer = [&](std::size_t, const QNetState& net) {
        const auto& layer = net.layers.front();
        const Matrix rw = fwht_apply(layer.rotation, layer.weight, Side::left_RT_W);
        path.e_norm.push_back(setup.gram_norm_sq(quantize_weight(rw, layer.w_spec) - rw));
    };
    const TrainTrajectory traj = qat_stage(state, setup.data, cfg, LossKind::quadratic, opts);
    for (const auto& p : traj.points) {
        path.logged_steps.push_back(p.step);
        path.lhs.push_back(p.pred_error);
    }
    return path;
}

Theorem1Report verify_theorem1_bound(const Theorem1Setup& setup, const std::vector<Theorem1Path>& paths,
                                     double slack)
{
    if (paths.empty())
        throw UsageError("verify_theorem1_bound: no paths");
    const Theorem1Path& first = paths.front();
    for (const auto& p : paths) {
        if (p.setup_id != setup.id)
            throw UsageError("verify_theorem1_bound: path was produced under a different setup");
        if (p.logged_steps != first.logged_steps || p.e_norm.size() != first.e_norm.size() ||
            p.lhs.size() != p.logged_steps.size())
            throw UsageError("verify_theorem1_bound: paths disagree in length or logging cadence");
    }
    if (first.logged_steps.empty() || first.logged_steps.front() != 0 ||
        first.logged_steps.back() >= first.e_norm.size())
        throw UsageError("verify_theorem1_bound: path must log step 0 and record every error term");

    const auto n = static_cast<double>(paths.size());
    std::vector<double> e_mean(first.e_norm.size(), 0.0);
    for (const auto& p : paths)
        for (std::size_t s = 0; s < e_mean.size(); ++s)
            e_mean[s] += p.e_norm[s] / n;

    Theorem1Report rep;
    rep.steps = first.logged_steps;
    rep.lhs.assign(rep.steps.size(), 0.0);
    for (const auto& p : paths)
        for (std::size_t i = 0; i < rep.lhs.size(); ++i)
            rep.lhs[i] += p.lhs[i] / n;
    rep.initial = rep.lhs.front();
    rep.final_lhs = rep.lhs.back();

    const double mu = setup.mu;
    const double decay = 1.0 - mu;
    const double coeff = 6.0 + 2.0 / mu;
    // acc_t = sum_{s<=t} (1-mu)^(t-s) e_s; the bound at step t uses acc_t / (1-mu).
    double acc = 0.0;
    std::size_t next = 0;
    for (std::size_t t = 0; t <= rep.steps.back(); ++t) {
        acc = decay * acc + e_mean[t];
        if (t == rep.steps[next]) {
            const double floor_term = coeff * acc / decay;
            const double rhs = std::pow(decay, static_cast<double>(t)) * rep.initial + floor_term;
            rep.floor_term.push_back(floor_term);
            rep.rhs.push_back(rhs);
            if (rep.lhs[next] > (1.0 + slack) * rhs)
                ++rep.violations;
            ++next;
        }
    }
    return rep;
}

std::string to_string(SelectionMode m)
{
    switch (m) {
    case SelectionMode::exhaustive:
        return "exhaustive";
    case SelectionMode::layerwise:
        return "layerwise";
    case SelectionMode::identity:
        return "identity";
    }
    return "layerwise";
}

SelectionMode parse_selection_mode(const std::string& s)
{
    if (s == "exhaustive")
        return SelectionMode::exhaustive;
    if (s == "layerwise")
        return SelectionMode::layerwise;
    if (s == "identity")
        return SelectionMode::identity;
    throw ConfigError("unknown selection mode '" + s + "'");
}

std::string to_string(CalibPrecision p)
{
    return p == CalibPrecision::quantized ? "quantized" : "full";
}

CalibPrecision parse_calib_precision(const std::string& s)
{
    if (s == "quantized")
        return CalibPrecision::quantized;
    if (s == "full")
        return CalibPrecision::full;
    throw ConfigError("unknown calibration precision '" + s + "'");
}

} // namespace roste
