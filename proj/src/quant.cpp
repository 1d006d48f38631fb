#include "roste/quant.hpp"

#include "roste/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace roste {

void QuantSpec::validate() const
{
    if (bits < 2 || bits > 16)
        throw DomainError("QuantSpec: bits must lie in [2, 16], got " + std::to_string(bits));
    if (!(clip > 0.0 && clip <= 1.0))
        throw DomainError("QuantSpec: clip must lie in (0, 1], got " + std::to_string(clip));
}

std::int32_t QuantSpec::code_min() const noexcept
{
    return mode == QuantMode::symmetric ? -(std::int32_t{1} << (bits - 1)) : 0;
}

std::int32_t QuantSpec::code_max() const noexcept
{
    return mode == QuantMode::symmetric ? (std::int32_t{1} << (bits - 1)) - 1 : (std::int32_t{1} << bits) - 1;
}

namespace {

struct GroupParams {
    double scale = 0.0;
    std::int32_t zero_point = 0;
    double constant = 0.0;
};

GroupParams group_params(std::span<const double> values, const QuantSpec& spec)
{
    GroupParams p;
    if (values.empty())
        return p;
    if (spec.mode == QuantMode::symmetric) {
        double amax = 0.0;
        for (double v : values)
            amax = std::max(amax, std::abs(v));
        p.scale = spec.clip * amax / static_cast<double>(spec.code_max());
        return p;
    }
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    p.scale = spec.clip * (*hi - *lo) / static_cast<double>(spec.code_max());
    if (p.scale == 0.0) {
        p.constant = *lo;
        return p;
    }
    p.zero_point = static_cast<std::int32_t>(std::round(-*lo / p.scale));
    return p;
}

std::int32_t encode(double v, const GroupParams& p, const QuantSpec& spec)
{
    if (p.scale == 0.0)
        return 0;
    // Clamp in double first so huge ratios (tiny scale) never overflow the cast.
    const double level = std::round(v / p.scale) + static_cast<double>(p.zero_point);
    const double clamped =
        std::clamp(level, static_cast<double>(spec.code_min()), static_cast<double>(spec.code_max()));
    return static_cast<std::int32_t>(clamped);
}

} // namespace

QuantizedTensor quantize(const Matrix& x, const QuantSpec& spec)
{
    spec.validate();
    if (!x.all_finite())
        throw DomainError("quantize: non-finite input");

    QuantizedTensor q;
    q.rows = x.rows();
    q.cols = x.cols();
    q.spec = spec;
    q.codes.resize(x.size());

    const std::size_t groups = spec.grouping == Grouping::per_row ? x.rows() : 1;
    q.scale.resize(groups);
    q.zero_point.resize(groups);
    q.group_constant.resize(groups);

    auto quantize_group = [&](std::size_t g, std::span<const double> values, std::size_t offset) {
        const GroupParams p = group_params(values, spec);
        q.scale[g] = p.scale;
        q.zero_point[g] = p.zero_point;
        q.group_constant[g] = p.constant;
        for (std::size_t i = 0; i < values.size(); ++i)
            q.codes[offset + i] = encode(values[i], p, spec);
    };

    if (spec.grouping == Grouping::per_row) {
        for (std::size_t r = 0; r < x.rows(); ++r)
            quantize_group(r, x.row_span(r), r * x.cols());
    } else {
        quantize_group(0, x.data(), 0);
    }
    return q;
}

Matrix dequantize(const QuantizedTensor& q)
{
    Matrix out(q.rows, q.cols);
    for (std::size_t r = 0; r < q.rows; ++r) {
        const std::size_t g = q.group_of(r);
        const double s = q.scale[g];
        const std::int32_t z = q.zero_point[g];
        auto orow = out.row_span(r);
        for (std::size_t c = 0; c < q.cols; ++c) {
            const std::int32_t code = q.codes[r * q.cols + c];
            orow[c] = s == 0.0 ? q.group_constant[g] : static_cast<double>(code - z) * s;
        }
    }
    return out;
}

Matrix fake_quantize(const Matrix& x, const QuantSpec& spec)
{
    return dequantize(quantize(x, spec));
}

double quant_error_sq(const Matrix& x, const QuantSpec& spec)
{
    return frobenius_sq(fake_quantize(x, spec) - x);
}

std::string to_string(QuantMode mode)
{
    return mode == QuantMode::symmetric ? "symmetric" : "asymmetric";
}

std::string to_string(Grouping grouping)
{
    return grouping == Grouping::per_row ? "per_row" : "per_tensor";
}

QuantMode parse_quant_mode(const std::string& s)
{
    if (s == "symmetric")
        return QuantMode::symmetric;
    if (s == "asymmetric")
        return QuantMode::asymmetric;
    throw ConfigError("unknown quantization mode '" + s + "'");
}

Grouping parse_grouping(const std::string& s)
{
    if (s == "per_row")
        return Grouping::per_row;
    if (s == "per_tensor")
        return Grouping::per_tensor;
    throw ConfigError("unknown grouping '" + s + "'");
}

} // namespace roste
