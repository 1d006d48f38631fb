#include "roste/hadamard.hpp"

#include "roste/errors.hpp"
#include "roste/quant.hpp"

#include <bit>
#include <cmath>

namespace roste {

namespace {

constexpr std::uint64_t kLayerSeedLabel = 0x6C61796572ULL; // "layer"

void require_dim(const RotationChoice& rc, std::size_t n, const char* what)
{
    if (rc.dim != n)
        throw ShapeError(std::string("fwht_apply: rotation dim ") + std::to_string(rc.dim) + " does not match " + what +
                         " " + std::to_string(n));
}

// Applies the unnormalized transform to every column of m.
void fwht_columns(Matrix& m)
{
    const std::size_t n = m.rows();
    const std::size_t cols = m.cols();
    for (std::size_t h = 1; h < n; h <<= 1) {
        for (std::size_t i = 0; i < n; i += h << 1) {
            for (std::size_t j = i; j < i + h; ++j) {
                auto a = m.row_span(j);
                auto b = m.row_span(j + h);
                for (std::size_t c = 0; c < cols; ++c) {
                    const double x = a[c];
                    const double y = b[c];
                    a[c] = x + y;
                    b[c] = x - y;
                }
            }
        }
    }
}

void fwht_rows(Matrix& m)
{
    for (std::size_t r = 0; r < m.rows(); ++r)
        fwht_inplace(m.row_span(r));
}

void scale_rows(Matrix& m, const std::vector<double>& f)
{
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (double& v : m.row_span(r))
            v *= f[r];
}

void scale_cols(Matrix& m, const std::vector<double>& f)
{
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row_span(r);
        for (std::size_t c = 0; c < row.size(); ++c)
            row[c] *= f[c];
    }
}

std::vector<double> scaled_signs(const RotationChoice& rc)
{
    std::vector<double> f = rc.signs();
    const double norm = 1.0 / std::sqrt(static_cast<double>(rc.dim));
    for (double& v : f)
        v *= norm;
    return f;
}

} // namespace

bool is_power_of_two(std::size_t n) noexcept
{
    return std::has_single_bit(n);
}

RotationChoice RotationChoice::hadamard(std::size_t dim, std::uint64_t sign_seed)
{
    RotationChoice rc{RotationKind::hadamard, dim, sign_seed};
    rc.validate();
    return rc;
}

void RotationChoice::validate() const
{
    if (kind == RotationKind::hadamard && (dim < 2 || !is_power_of_two(dim)))
        throw UnsupportedDimension("Walsh-Hadamard rotation needs a power-of-two dimension >= 2, got " +
                                   std::to_string(dim));
}

std::vector<double> RotationChoice::signs() const
{
    if (kind == RotationKind::identity)
        return std::vector<double>(dim, 1.0);
    Rng rng(sign_seed, 0);
    return rademacher(rng, dim);
}

std::uint64_t layer_sign_seed(std::uint64_t global_seed, std::size_t layer_index) noexcept
{
    return derive_seed(derive_seed(global_seed, kLayerSeedLabel), layer_index);
}

Matrix materialize(const RotationChoice& rc)
{
    rc.validate();
    if (rc.is_identity())
        return Matrix::identity(rc.dim);
    const std::size_t d = rc.dim;
    const std::vector<double> f = scaled_signs(rc);
    Matrix r(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            r(i, j) = (std::popcount(i & j) & 1 ? -1.0 : 1.0) * f[j];
    return r;
}

void fwht_inplace(std::span<double> v) noexcept
{
    const std::size_t n = v.size();
    for (std::size_t h = 1; h < n; h <<= 1) {
        for (std::size_t i = 0; i < n; i += h << 1) {
            for (std::size_t j = i; j < i + h; ++j) {
                const double x = v[j];
                const double y = v[j + h];
                v[j] = x + y;
                v[j + h] = x - y;
            }
        }
    }
}

Matrix fwht_apply(const RotationChoice& rc, const Matrix& x, Side side)
{
    rc.validate();
    if (side == Side::left_RT_W) {
        require_dim(rc, x.rows(), "row count");
        if (rc.is_identity())
            return x;
        // (R^T W)_j = r_j / sqrt(d) * (H W)_j
        Matrix out = x;
        fwht_columns(out);
        scale_rows(out, scaled_signs(rc));
        return out;
    }
    require_dim(rc, x.cols(), "column count");
    if (rc.is_identity())
        return x;
    // (X R)_{:,j} = r_j / sqrt(d) * (X H)_{:,j}
    Matrix out = x;
    fwht_rows(out);
    scale_cols(out, scaled_signs(rc));
    return out;
}

Matrix fwht_apply_inverse(const RotationChoice& rc, const Matrix& x, Side side)
{
    rc.validate();
    if (side == Side::left_RT_W) {
        require_dim(rc, x.rows(), "row count");
        if (rc.is_identity())
            return x;
        // R W = H Diag(r) W / sqrt(d)
        Matrix out = x;
        scale_rows(out, scaled_signs(rc));
        fwht_columns(out);
        return out;
    }
    require_dim(rc, x.cols(), "column count");
    if (rc.is_identity())
        return x;
    // X R^T = X Diag(r) H / sqrt(d)
    Matrix out = x;
    scale_cols(out, scaled_signs(rc));
    fwht_rows(out);
    return out;
}

Prop1Report check_prop1(std::size_t d, int bits, std::size_t trials, double delta, Rng& rng,
                        WeightDistribution dist)
{
    if (!is_power_of_two(d) || d < 2)
        throw UnsupportedDimension("check_prop1: d must be a power of two >= 2, got " + std::to_string(d));
    if (trials == 0)
        throw UsageError("check_prop1: trials must be >= 1");
    if (!(delta > 0.0 && delta < 1.0))
        throw DomainError("check_prop1: delta must lie in (0, 1)");

    const QuantSpec spec = QuantSpec::symmetric(bits, Grouping::per_tensor, 1.0);
    const double levels = static_cast<double>(spec.code_max());
    const double eq17_factor = std::log(4.0 * static_cast<double>(d) / delta) / (2.0 * levels * levels);
    // Slack for floating-point rounding exactly at half-steps.
    constexpr double rel_tol = 1e-12;

    Prop1Report rep;
    rep.d = d;
    rep.bits = bits;
    rep.trials = trials;
    rep.delta = delta;

    std::size_t eq17_violations = 0;
    double sum_id = 0.0;
    double sum_rot = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        Matrix w(d, 1);
        if (dist == WeightDistribution::gaussian) {
            for (double& v : w.data())
                v = rng.normal();
        } else {
            for (double& v : w.data())
                v = 0.1 * rng.normal();
            w(0, 0) = 10.0;
        }
        const double wmax = max_abs(w);
        const double eq16_rhs = static_cast<double>(d) * wmax * wmax / (4.0 * levels * levels);
        const double err_id = quant_error_sq(w, spec);
        if (err_id > eq16_rhs * (1.0 + rel_tol))
            ++rep.eq16_violations;

        const RotationChoice rc = RotationChoice::hadamard(d, rng.next_u64());
        // R(zeta) w is the left-inverse placement: (1/sqrt d) H Diag(r) w.
        const Matrix rw = fwht_apply_inverse(rc, w, Side::left_RT_W);
        const double err_rot = quant_error_sq(rw, spec);
        if (err_rot > eq17_factor * frobenius_sq(w) * (1.0 + rel_tol))
            ++eq17_violations;

        sum_id += err_id;
        sum_rot += err_rot;
    }
    const auto n = static_cast<double>(trials);
    rep.eq17_violation_frac = static_cast<double>(eq17_violations) / n;
    rep.mean_err_identity = sum_id / n;
    rep.mean_err_rotated = sum_rot / n;
    return rep;
}

std::string to_string(RotationKind kind)
{
    return kind == RotationKind::identity ? "identity" : "hadamard";
}

RotationKind parse_rotation_kind(const std::string& s)
{
    if (s == "identity")
        return RotationKind::identity;
    if (s == "hadamard")
        return RotationKind::hadamard;
    throw ConfigError("unknown rotation kind '" + s + "'");
}

std::string to_string(WeightDistribution dist)
{
    return dist == WeightDistribution::gaussian ? "gaussian" : "outlier";
}

WeightDistribution parse_weight_distribution(const std::string& s)
{
    if (s == "gaussian")
        return WeightDistribution::gaussian;
    if (s == "outlier")
        return WeightDistribution::outlier;
    throw ConfigError("unknown weight distribution '" + s + "'");
}

} // namespace roste
