#pragma once

// Rotated straight-through-estimator training.
//
// Training alternates K times between
//   1. a lower level that picks, per layer, R_i in {I, H_i} minimizing the
//      weight-activation quantization error
//        E(W, R) = sum_i ||Q_w(R_i^T W_i) - R_i^T W_i||^2
//                + (1/n) sum_i sum_j ||Q_x(X_ij R_i) - X_ij R_i||^2
//      on a calibration batch, and
//   2. T steps of minibatch STE-SGD on the weights with those rotations frozen.

#include "roste/hadamard.hpp"
#include "roste/numkit.hpp"
#include "roste/qnet.hpp"
#include "roste/quant.hpp"

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace roste {

// identity forces R_i = I everywhere: the plain STE baseline.
enum class SelectionMode { exhaustive, layerwise, identity };
// Whether calibration activations come from the candidate quantized network or
// from the full-precision one.
enum class CalibPrecision { quantized, full };

inline constexpr std::size_t kMaxExhaustiveLayers = 20;
inline constexpr double kDivergenceThreshold = 1e12;

struct Dataset {
    Matrix x;
    Matrix y;
    std::size_t size() const noexcept { return x.rows(); }
};

struct RosteConfig {
    std::size_t K = 1;
    std::size_t T = 100;
    std::optional<double> eta = 0.01; // nullopt: "auto", resolved by the Theorem-1 engine
    std::size_t calib_n = 128;
    std::size_t batch = 8;
    std::uint64_t seed = 0;
    SelectionMode selection = SelectionMode::layerwise;
    std::size_t log_every = 0; // 0: max(1, T / 200)
    CalibPrecision calib_precision = CalibPrecision::quantized;
    double momentum = 0.0;

    void validate(std::size_t layer_count) const;
    std::size_t resolved_log_every() const noexcept;
};

struct TrajectoryPoint {
    std::size_t step = 0;
    double loss = 0.0;
    // quadratic: mean squared error of the quantized model; cross_entropy: error rate.
    double pred_error = 0.0;
    double surrogate = 0.0;
    std::vector<RotationKind> rotations;
};

struct TrainTrajectory {
    std::vector<TrajectoryPoint> points;
};

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, TrainTrajectory trajectory)
        : std::runtime_error(what), trajectory_(std::move(trajectory))
    {
    }
    const TrainTrajectory& trajectory() const noexcept { return trajectory_; }

private:
    TrainTrajectory trajectory_;
};

struct SurrogateReport {
    double total = 0.0;
    std::vector<double> weight_terms;
    std::vector<double> activation_terms;

    double layer_term(std::size_t i) const { return weight_terms.at(i) + activation_terms.at(i); }
};

// Throws UsageError for an empty calibration batch.
SurrogateReport surrogate_error(const QNetState& net, const std::vector<RotationChoice>& rotations,
                                const Matrix& calib, CalibPrecision precision = CalibPrecision::quantized);

// Candidate Walsh-Hadamard rotation for a layer; identity when in_dim is not a power of two.
RotationChoice candidate_rotation(std::size_t in_dim, std::uint64_t seed, std::size_t layer_index);

struct Selection {
    std::vector<RotationChoice> rotations;
    SurrogateReport surrogate; // of the chosen configuration
};

// exhaustive: argmin over all 2^l assignments, ties toward fewer rotations.
// layerwise: evaluate all-identity and all-Hadamard once, then pick per layer
// the smaller layer contribution (ties toward identity).
// Throws UsageError for exhaustive search over more than kMaxExhaustiveLayers layers.
Selection select_rotations(const QNetState& net, const Matrix& calib, SelectionMode mode, std::uint64_t seed,
                           CalibPrecision precision = CalibPrecision::quantized);

// Calibration rows for outer round `round`: min(calib_n, N) distinct samples.
Matrix draw_calibration(const Dataset& data, std::size_t calib_n, std::uint64_t seed, std::size_t round);
// Minibatch indices for global step `step`, uniform with replacement.
std::vector<std::size_t> draw_minibatch(std::size_t data_size, std::size_t batch, std::uint64_t seed,
                                        std::size_t step);

// Everything needed to continue training bit-for-bit.
struct TrainerState {
    QNetState net;
    std::size_t step = 0;  // global update count
    std::size_t round = 0; // outer round index
    std::vector<Matrix> velocity; // empty unless momentum > 0
};

// Called with the global step count after the initial state and after every update.
using StepObserver = std::function<void(std::size_t step, const QNetState& net)>;

struct StageOptions {
    bool log_initial = true;
    StepObserver observer;
};

// Runs config.T STE-SGD steps from state.step with the rotations already in state.net.
// Throws DivergenceError when the loss exceeds 1e12 or becomes non-finite.
TrainTrajectory qat_stage(TrainerState& state, const Dataset& data, const RosteConfig& config, LossKind loss,
                          const StageOptions& options = {});

std::pair<QNetState, TrainTrajectory> qat_stage(const QNetState& net, const std::vector<RotationChoice>& rotations,
                                                const Dataset& data, const RosteConfig& config, LossKind loss);

struct RoundRecord {
    std::vector<RotationChoice> rotations;
    SurrogateReport selection_surrogate;
    TrainTrajectory trajectory;
};

struct RosteResult {
    TrainerState state;
    std::vector<RoundRecord> rounds;
};

RosteResult run_roste(const QNetState& pretrained, const Dataset& data, const RosteConfig& config, LossKind loss);

// ---------------------------------------------------------------------------
// Scalar linear model  y = <Q_x(R x), Q_w(R w)>  in the interpolation regime.
//
// The model is a single d x 1 layer; with layer rotation M the features are
// Q_x(M^T x), so R = M^T and R w is the layer's rotated weight.

struct OutlierProfile {
    double magnitude = 10.0; // 1 disables the outlier
    bool on_weights = true;
    bool on_inputs = false;
    std::size_t coordinate = 0;
};

struct Theorem1Setup {
    std::size_t d = 0;
    RotationChoice rotation;
    QuantSpec x_spec;
    Dataset data;       // raw x and exact labels
    Matrix features;    // Q_x(R x_n) rows
    Matrix w_star;      // w*_R, in rotated coordinates
    Matrix w_star_model; // w* in input coordinates; w*_R = R w*
    Matrix gram;        // mean_n Q_x(R x_n) Q_x(R x_n)^T
    double lambda_min = 0.0;
    double rho = 0.0;
    double mu = 0.0;  // lambda_min^2 / (12 rho)
    double eta = 0.0; // lambda_min / (6 rho)
    std::uint64_t id = 0;

    // Single-layer network with the setup's rotation and Q_x, starting from w0.
    QNetState model(const QuantSpec& w_spec, const Matrix& w0) const;
    // ||v||_G^2
    double gram_norm_sq(const Matrix& v) const;
};

// Throws DomainError when the feature Gram matrix is degenerate.
Theorem1Setup build_theorem1_setup(std::size_t d, int x_bits, RotationKind rotation, const OutlierProfile& outliers,
                                   std::size_t data_count, std::uint64_t seed);

struct Theorem1Path {
    std::uint64_t setup_id = 0;
    std::vector<std::size_t> logged_steps;
    std::vector<double> lhs;    // quantized prediction error at logged steps
    std::vector<double> e_norm; // ||e(R w^s)||_G^2 for s = 0..T
};

// One single-sample STE-SGD run of T steps at the setup's step size, from w = 0.
Theorem1Path run_theorem1_path(const Theorem1Setup& setup, const QuantSpec& w_spec, std::size_t T,
                               std::uint64_t path_seed, std::size_t log_every);

struct Theorem1Report {
    std::vector<std::size_t> steps;
    std::vector<double> lhs;        // seed average
    std::vector<double> rhs;        // bound evaluated with seed-averaged error terms
    std::vector<double> floor_term; // (6 + 2/mu) * weighted error sum
    std::size_t violations = 0;     // lhs > (1 + slack) rhs
    double initial = 0.0;
    double final_lhs = 0.0;
};

// Throws UsageError when paths are empty, disagree in length, or belong to another setup.
Theorem1Report verify_theorem1_bound(const Theorem1Setup& setup, const std::vector<Theorem1Path>& paths,
                                     double slack = 0.02);

std::string to_string(SelectionMode m);
SelectionMode parse_selection_mode(const std::string& s);
std::string to_string(CalibPrecision p);
CalibPrecision parse_calib_precision(const std::string& s);

} // namespace roste
