#include "roste/numkit.hpp"

#include "roste/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace roste {

namespace {

std::string shape_str(const Matrix& m)
{
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op)
{
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

} // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols), data_(rows * cols, fill)
{
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data))
{
    if (data_.size() != rows_ * cols_)
        throw ShapeError("Matrix: data length " + std::to_string(data_.size()) + " != " + std::to_string(rows_) +
                         "x" + std::to_string(cols_));
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
{
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_)
            throw ShapeError("Matrix: ragged initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n)
{
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
        m(i, i) = 1.0;
    return m;
}

Matrix Matrix::column(std::span<const double> values)
{
    return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

Matrix Matrix::row(std::span<const double> values)
{
    return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

bool Matrix::all_finite() const noexcept
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix& a, const Matrix& b)
{
    if (a.cols() != b.rows())
        throw ShapeError("matmul: " + shape_str(a) + " x " + shape_str(b));
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto orow = out.row_span(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0)
                continue;
            auto brow = b.row_span(k);
            for (std::size_t j = 0; j < b.cols(); ++j)
                orow[j] += aik * brow[j];
        }
    }
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b)
{
    if (a.rows() != b.rows())
        throw ShapeError("matmul_tn: " + shape_str(a) + "^T x " + shape_str(b));
    Matrix out(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        auto arow = a.row_span(k);
        auto brow = b.row_span(k);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = arow[i];
            if (aki == 0.0)
                continue;
            auto orow = out.row_span(i);
            for (std::size_t j = 0; j < b.cols(); ++j)
                orow[j] += aki * brow[j];
        }
    }
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b)
{
    if (a.cols() != b.cols())
        throw ShapeError("matmul_nt: " + shape_str(a) + " x " + shape_str(b) + "^T");
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j)
            out(i, j) = dot(a.row_span(i), b.row_span(j));
    return out;
}

Matrix transpose(const Matrix& a)
{
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            t(j, i) = a(i, j);
    return t;
}

Matrix operator+(const Matrix& a, const Matrix& b)
{
    require_same_shape(a, b, "add");
    Matrix out = a;
    axpy(1.0, b, out);
    return out;
}

Matrix operator-(const Matrix& a, const Matrix& b)
{
    require_same_shape(a, b, "sub");
    Matrix out = a;
    axpy(-1.0, b, out);
    return out;
}

Matrix operator*(double k, const Matrix& a)
{
    Matrix out = a;
    for (double& v : out.data())
        v *= k;
    return out;
}

Matrix hadamard_product(const Matrix& a, const Matrix& b)
{
    require_same_shape(a, b, "hadamard_product");
    Matrix out = a;
    auto o = out.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < o.size(); ++i)
        o[i] *= bd[i];
    return out;
}

void axpy(double alpha, const Matrix& x, Matrix& y)
{
    require_same_shape(x, y, "axpy");
    auto xd = x.data();
    auto yd = y.data();
    for (std::size_t i = 0; i < yd.size(); ++i)
        yd[i] += alpha * xd[i];
}

double frobenius_sq(const Matrix& a)
{
    double s = 0.0;
    for (double v : a.data())
        s += v * v;
    return s;
}

double max_abs(const Matrix& a)
{
    double m = 0.0;
    for (double v : a.data())
        m = std::max(m, std::abs(v));
    return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b)
{
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < ad.size(); ++i)
        m = std::max(m, std::abs(ad[i] - bd[i]));
    return m;
}

double dot(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size())
        throw ShapeError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

double quadratic_form(const Matrix& g, std::span<const double> x)
{
    if (g.rows() != g.cols() || g.rows() != x.size())
        throw ShapeError("quadratic_form: " + shape_str(g) + " with vector of length " + std::to_string(x.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < g.rows(); ++i)
        s += x[i] * dot(g.row_span(i), x);
    return s;
}

Matrix gather_rows(const Matrix& a, std::span<const std::size_t> indices)
{
    Matrix out(indices.size(), a.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= a.rows())
            throw ShapeError("gather_rows: index out of range");
        auto src = a.row_span(indices[i]);
        std::copy(src.begin(), src.end(), out.row_span(i).begin());
    }
    return out;
}

std::vector<double> symmetric_eigenvalues(const Matrix& input, double tol, int max_sweeps)
{
    if (input.rows() != input.cols())
        throw ShapeError("symmetric_eigenvalues: non-square " + shape_str(input));
    const std::size_t n = input.rows();
    Matrix a = input;
    const double scale = std::max(frobenius_sq(a), 1e-300);
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q)
                off += a(p, q) * a(p, q);
        if (off <= tol * tol * scale)
            break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0)
                    continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> ev(n);
    for (std::size_t i = 0; i < n; ++i)
        ev[i] = a(i, i);
    std::sort(ev.begin(), ev.end());
    return ev;
}

std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t label) noexcept
{
    return splitmix64(splitmix64(seed) ^ (label * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL));
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) noexcept : seed_(seed), stream_(stream)
{
    std::uint64_t x = derive_seed(seed, stream);
    for (auto& s : s_) {
        x += 0x9E3779B97F4A7C15ULL;
        s = splitmix64(x);
    }
}

std::uint64_t Rng::next_u64() noexcept
{
    auto rotl = [](std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() noexcept
{
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) noexcept
{
    // Lemire's multiply-shift with rejection, exact uniformity.
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
        const std::uint64_t threshold = (0 - n) % n;
        while (low < threshold) {
            x = next_u64();
            m = static_cast<__uint128_t>(x) * n;
            low = static_cast<std::uint64_t>(m);
        }
    }
    return static_cast<std::uint64_t>(m >> 64);
}

double Rng::normal() noexcept
{
    if (has_cached_) {
        has_cached_ = false;
        return cached_normal_;
    }
    // 1 - uniform() lies in (0, 1], so the log is finite.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    cached_normal_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
}

double Rng::sign() noexcept
{
    return (next_u64() >> 63) ? 1.0 : -1.0;
}

Matrix gaussian(Rng& rng, std::size_t rows, std::size_t cols)
{
    Matrix m(rows, cols);
    for (double& v : m.data())
        v = rng.normal();
    return m;
}

std::vector<double> rademacher(Rng& rng, std::size_t d)
{
    std::vector<double> r(d);
    for (double& v : r)
        v = rng.sign();
    return r;
}

} // namespace roste
