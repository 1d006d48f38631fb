#pragma once

// Dense numeric substrate: row-major double matrices and a reproducible PRNG.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace roste {

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);
    static Matrix column(std::span<const double> values);
    static Matrix row(std::span<const double> values);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::span<double> row_span(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row_span(std::size_t r) const noexcept
    {
        return {data_.data() + r * cols_, cols_};
    }

    bool all_finite() const noexcept;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Throws ShapeError when a.cols() != b.rows().
Matrix matmul(const Matrix& a, const Matrix& b);
// a^T * b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
// a * b^T without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double k, const Matrix& a);
Matrix hadamard_product(const Matrix& a, const Matrix& b);
void axpy(double alpha, const Matrix& x, Matrix& y); // y += alpha * x

double frobenius_sq(const Matrix& a);
double max_abs(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);
double dot(std::span<const double> a, std::span<const double> b);
// x^T G x for square G.
double quadratic_form(const Matrix& g, std::span<const double> x);

// Rows of `a` selected by index, in order.
Matrix gather_rows(const Matrix& a, std::span<const std::size_t> indices);

// Eigenvalues of a symmetric matrix in ascending order (cyclic Jacobi rotations).
std::vector<double> symmetric_eigenvalues(const Matrix& a, double tol = 1e-14, int max_sweeps = 100);

// SplitMix64 finalizer; used for seeding and for deriving child seeds.
std::uint64_t splitmix64(std::uint64_t x) noexcept;
// Order-sensitive combination of a seed with a label.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t label) noexcept;

// xoshiro256** generator. State is expanded from (seed, stream) with SplitMix64,
// so the same pair yields the same sequence on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept;

    std::uint64_t next_u64() noexcept;
    // Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept;
    // Uniform integer on [0, n).
    std::uint64_t below(std::uint64_t n) noexcept;
    // Standard normal via the Box-Muller transform; the second variate of each
    // pair is cached and returned by the following call.
    double normal() noexcept;
    // +1 or -1 with probability 1/2 each (top bit of one draw).
    double sign() noexcept;

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }

private:
    std::uint64_t s_[4];
    std::uint64_t seed_;
    std::uint64_t stream_;
    double cached_normal_ = 0.0;
    bool has_cached_ = false;
};

Matrix gaussian(Rng& rng, std::size_t rows, std::size_t cols);
std::vector<double> rademacher(Rng& rng, std::size_t d);

} // namespace roste
