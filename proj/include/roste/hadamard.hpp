#pragma once

// Randomized Walsh-Hadamard rotations R = (1/sqrt(d)) * H_d * Diag(r), with H_d
// the Sylvester-ordered +/-1 Hadamard matrix and r a Rademacher sign vector.
// R is orthonormal; the unnormalized H_d is never exposed.

#include "roste/numkit.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace roste {

enum class RotationKind { identity, hadamard };

struct RotationChoice {
    RotationKind kind = RotationKind::identity;
    std::size_t dim = 0;
    std::uint64_t sign_seed = 0;

    static RotationChoice identity(std::size_t dim) { return {RotationKind::identity, dim, 0}; }
    // Throws UnsupportedDimension unless dim is a power of two >= 2.
    static RotationChoice hadamard(std::size_t dim, std::uint64_t sign_seed);

    bool is_identity() const noexcept { return kind == RotationKind::identity; }
    void validate() const;
    // The sign diagonal r; all ones for the identity.
    std::vector<double> signs() const;

    friend bool operator==(const RotationChoice&, const RotationChoice&) = default;
};

bool is_power_of_two(std::size_t n) noexcept;

// Sign seed for the candidate rotation of layer `layer_index` under a global seed.
std::uint64_t layer_sign_seed(std::uint64_t global_seed, std::size_t layer_index) noexcept;

Matrix materialize(const RotationChoice& rc);

// left_RT_W: R^T * W (W has rc.dim rows).  right_XR: X * R (X has rc.dim columns).
enum class Side { left_RT_W, right_XR };

// Same result as the dense product with materialize(rc), in O(n d log d).
Matrix fwht_apply(const RotationChoice& rc, const Matrix& x, Side side);
// Inverse placement: left gives R * W, right gives X * R^T.
Matrix fwht_apply_inverse(const RotationChoice& rc, const Matrix& x, Side side);

// In-place unnormalized Walsh-Hadamard butterfly on a power-of-two length vector.
void fwht_inplace(std::span<double> v) noexcept;

enum class WeightDistribution { gaussian, outlier };

struct Prop1Report {
    std::size_t d = 0;
    int bits = 0;
    std::size_t trials = 0;
    double delta = 0.0;
    // Unrotated quantization errors above d * max_i w_i^2 / (4 (2^(b-1) - 1)^2).
    std::size_t eq16_violations = 0;
    // Fraction of random sign seeds whose rotated error exceeds
    // log(4d / delta) / (2 (2^(b-1) - 1)^2) * ||w||^2.
    double eq17_violation_frac = 0.0;
    double mean_err_identity = 0.0;
    double mean_err_rotated = 0.0;
};

// Draws `trials` weight vectors and, for each, a fresh sign seed; quantizes with a
// symmetric per-tensor b-bit quantizer with c = 1.
// gaussian: w ~ N(0, I).  outlier: w_0 = 10, remaining entries ~ N(0, 0.01).
Prop1Report check_prop1(std::size_t d, int bits, std::size_t trials, double delta, Rng& rng,
                        WeightDistribution dist);

std::string to_string(RotationKind kind);
RotationKind parse_rotation_kind(const std::string& s);
std::string to_string(WeightDistribution dist);
WeightDistribution parse_weight_distribution(const std::string& s);

} // namespace roste
