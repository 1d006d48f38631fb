#pragma once

// Group-wise uniform quantizers.
//
//   Q(X) = (clamp_b(round(X / s) + z) - z) * s
//
// symmetric:  s = c * max|X| / (2^(b-1) - 1),         z = 0,               codes in [-2^(b-1), 2^(b-1) - 1]
// asymmetric: s = c * (max X - min X) / (2^b - 1),    z = round(-min X / s), codes in [0, 2^b - 1]
//
// round() is nearest with ties away from zero. The clipping factor c only
// shrinks s; values beyond the clipped range saturate in clamp_b.

#include "roste/numkit.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace roste {

enum class QuantMode { symmetric, asymmetric };

// per_row: one (s, z) per matrix row. For activations a row is a token; for
// weights the caller passes the output-channel-major layout.
enum class Grouping { per_tensor, per_row };

struct QuantSpec {
    int bits = 4;
    QuantMode mode = QuantMode::symmetric;
    double clip = 1.0;
    Grouping grouping = Grouping::per_row;

    static QuantSpec symmetric(int bits, Grouping grouping = Grouping::per_row, double clip = 1.0)
    {
        return {bits, QuantMode::symmetric, clip, grouping};
    }
    static QuantSpec asymmetric(int bits, Grouping grouping = Grouping::per_row, double clip = 1.0)
    {
        return {bits, QuantMode::asymmetric, clip, grouping};
    }

    // Throws DomainError unless 2 <= bits <= 16 and 0 < clip <= 1.
    void validate() const;

    std::int32_t code_min() const noexcept;
    std::int32_t code_max() const noexcept;

    friend bool operator==(const QuantSpec&, const QuantSpec&) = default;
};

struct QuantizedTensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::int32_t> codes;      // row-major, same shape as the source
    std::vector<double> scale;            // one per group
    std::vector<std::int32_t> zero_point; // one per group
    // Value a zero-scale group dequantizes to (0 for symmetric groups).
    std::vector<double> group_constant;
    QuantSpec spec;

    std::size_t group_count() const noexcept { return scale.size(); }
    std::size_t group_of(std::size_t row) const noexcept
    {
        return spec.grouping == Grouping::per_row ? row : 0;
    }
};

// Throws DomainError on non-finite input or an invalid spec.
QuantizedTensor quantize(const Matrix& x, const QuantSpec& spec);
Matrix dequantize(const QuantizedTensor& q);
Matrix fake_quantize(const Matrix& x, const QuantSpec& spec);
// ||fake_quantize(x) - x||_F^2
double quant_error_sq(const Matrix& x, const QuantSpec& spec);

std::string to_string(QuantMode mode);
std::string to_string(Grouping grouping);
QuantMode parse_quant_mode(const std::string& s);
Grouping parse_grouping(const std::string& s);

} // namespace roste
