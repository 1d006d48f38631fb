#include "roste/qnet.hpp"

#include "roste/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

namespace roste {

void QNetState::validate() const
{
    if (layers.empty())
        throw ShapeError("QNetState: no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.weight.empty())
            throw ShapeError("QNetState: layer " + std::to_string(i) + " has an empty weight");
        l.rotation.validate();
        if (l.rotation.dim != l.in_dim())
            throw ShapeError("QNetState: layer " + std::to_string(i) + " rotation dim " +
                             std::to_string(l.rotation.dim) + " != in_dim " + std::to_string(l.in_dim()));
        if (l.w_spec)
            l.w_spec->validate();
        if (l.x_spec)
            l.x_spec->validate();
        if (i + 1 < layers.size() && l.out_dim() != layers[i + 1].in_dim())
            throw ShapeError("QNetState: layer " + std::to_string(i) + " out_dim " + std::to_string(l.out_dim()) +
                             " != next in_dim " + std::to_string(layers[i + 1].in_dim()));
    }
}

std::size_t QNetState::in_dim() const
{
    return layers.empty() ? 0 : layers.front().in_dim();
}

std::size_t QNetState::out_dim() const
{
    return layers.empty() ? 0 : layers.back().out_dim();
}

std::vector<RotationChoice> QNetState::rotations() const
{
    std::vector<RotationChoice> out;
    out.reserve(layers.size());
    for (const auto& l : layers)
        out.push_back(l.rotation);
    return out;
}

void QNetState::set_rotations(const std::vector<RotationChoice>& rotations)
{
    if (rotations.size() != layers.size())
        throw ShapeError("set_rotations: expected " + std::to_string(layers.size()) + " rotations");
    for (std::size_t i = 0; i < layers.size(); ++i)
        layers[i].rotation = rotations[i];
    validate();
}

std::vector<Matrix> QNetState::weights() const
{
    std::vector<Matrix> out;
    out.reserve(layers.size());
    for (const auto& l : layers)
        out.push_back(l.weight);
    return out;
}

Matrix quantize_weight(const Matrix& rotated_weight, const std::optional<QuantSpec>& spec)
{
    if (!spec)
        return rotated_weight;
    if (spec->grouping == Grouping::per_tensor)
        return fake_quantize(rotated_weight, *spec);
    return transpose(fake_quantize(transpose(rotated_weight), *spec));
}

Matrix quantize_activation(const Matrix& rotated_input, const std::optional<QuantSpec>& spec)
{
    if (!spec)
        return rotated_input;
    QuantSpec per_sample = *spec;
    per_sample.grouping = Grouping::per_row;
    return fake_quantize(rotated_input, per_sample);
}

std::uint64_t fingerprint(const QNetState& net)
{
    std::uint64_t h = 0x243F6A8885A308D3ULL;
    auto mix = [&h](std::uint64_t v) { h = splitmix64(h ^ v); };
    for (const auto& l : net.layers) {
        mix(l.weight.rows());
        mix(l.weight.cols());
        for (double v : l.weight.data())
            mix(std::bit_cast<std::uint64_t>(v));
        mix(static_cast<std::uint64_t>(l.rotation.kind));
        mix(l.rotation.dim);
        mix(l.rotation.sign_seed);
        for (const auto* spec : {&l.w_spec, &l.x_spec}) {
            mix(spec->has_value());
            if (*spec) {
                mix(static_cast<std::uint64_t>((*spec)->bits));
                mix(static_cast<std::uint64_t>((*spec)->mode));
                mix(std::bit_cast<std::uint64_t>((*spec)->clip));
                mix(static_cast<std::uint64_t>((*spec)->grouping));
            }
        }
        mix(static_cast<std::uint64_t>(l.activation));
    }
    return h;
}

namespace {

void apply_activation(Matrix& m, Activation a)
{
    if (a == Activation::relu)
        for (double& v : m.data())
            v = v > 0.0 ? v : 0.0;
}

void check_input(const QNetState& net, const Matrix& x)
{
    net.validate();
    if (x.cols() != net.in_dim())
        throw ShapeError("forward: input has " + std::to_string(x.cols()) + " columns, network expects " +
                         std::to_string(net.in_dim()));
}

} // namespace

ForwardResult forward(const QNetState& net, const Matrix& x)
{
    check_input(net, x);
    ForwardResult res;
    res.tape.fingerprint = fingerprint(net);
    res.tape.layers.reserve(net.layers.size());
    Matrix act = x;
    for (const auto& l : net.layers) {
        LayerTape t;
        t.input = std::move(act);
        t.rotated_input = fwht_apply(l.rotation, t.input, Side::right_XR);
        t.q_input = quantize_activation(t.rotated_input, l.x_spec);
        t.rotated_weight = fwht_apply(l.rotation, l.weight, Side::left_RT_W);
        t.q_weight = quantize_weight(t.rotated_weight, l.w_spec);
        t.pre_activation = matmul(t.q_input, t.q_weight);
        act = t.pre_activation;
        apply_activation(act, l.activation);
        res.tape.layers.push_back(std::move(t));
    }
    res.output = std::move(act);
    return res;
}

Matrix predict(const QNetState& net, const Matrix& x)
{
    check_input(net, x);
    Matrix act = x;
    for (const auto& l : net.layers) {
        const Matrix qx = quantize_activation(fwht_apply(l.rotation, act, Side::right_XR), l.x_spec);
        const Matrix qw = quantize_weight(fwht_apply(l.rotation, l.weight, Side::left_RT_W), l.w_spec);
        act = matmul(qx, qw);
        apply_activation(act, l.activation);
    }
    return act;
}

Matrix predict_full_precision(const QNetState& net, const Matrix& x)
{
    check_input(net, x);
    Matrix act = x;
    for (const auto& l : net.layers) {
        act = matmul(act, l.weight);
        apply_activation(act, l.activation);
    }
    return act;
}

std::vector<Matrix> backward_ste(const QNetState& net, const Tape& tape, const Matrix& loss_grad)
{
    if (tape.layers.size() != net.layers.size() || tape.fingerprint != fingerprint(net))
        throw UsageError("backward_ste: tape was recorded on a different network state");
    std::vector<Matrix> grads(net.layers.size());
    Matrix upstream = loss_grad;
    for (std::size_t idx = net.layers.size(); idx-- > 0;) {
        const auto& l = net.layers[idx];
        const auto& t = tape.layers[idx];
        if (upstream.rows() != t.pre_activation.rows() || upstream.cols() != t.pre_activation.cols())
            throw ShapeError("backward_ste: loss gradient shape does not match layer output");
        Matrix dz = std::move(upstream);
        if (l.activation == Activation::relu) {
            auto dzd = dz.data();
            auto pre = t.pre_activation.data();
            for (std::size_t i = 0; i < dzd.size(); ++i)
                if (!(pre[i] > 0.0))
                    dzd[i] = 0.0;
        }
        // STE: d/d(R^T W) of Q_w(R^T W) is the identity, then d(R^T W)/dW maps back by R.
        const Matrix d_rotated_w = matmul_tn(t.q_input, dz);
        grads[idx] = fwht_apply_inverse(l.rotation, d_rotated_w, Side::left_RT_W);
        if (idx > 0) {
            const Matrix d_rotated_x = matmul_nt(dz, t.q_weight);
            upstream = fwht_apply_inverse(l.rotation, d_rotated_x, Side::right_XR);
        }
    }
    return grads;
}

double loss_value(const Matrix& output, const Matrix& y, LossKind loss)
{
    const auto n = static_cast<double>(output.rows());
    if (output.rows() == 0)
        throw ShapeError("loss: empty batch");
    if (loss == LossKind::quadratic) {
        if (output.rows() != y.rows() || output.cols() != y.cols())
            throw ShapeError("loss: target shape does not match output");
        return 0.5 * frobenius_sq(output - y) / n;
    }
    if (y.rows() != output.rows() || y.cols() != 1)
        throw ShapeError("loss: cross_entropy expects an n x 1 label column");
    double total = 0.0;
    for (std::size_t r = 0; r < output.rows(); ++r) {
        auto row = output.row_span(r);
        const auto label = static_cast<std::size_t>(y(r, 0));
        if (label >= row.size())
            throw ShapeError("loss: class label out of range");
        const double m = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double v : row)
            z += std::exp(v - m);
        total += std::log(z) + m - row[label];
    }
    return total / n;
}

Matrix loss_gradient(const Matrix& output, const Matrix& y, LossKind loss)
{
    const auto n = static_cast<double>(output.rows());
    if (loss == LossKind::quadratic) {
        if (output.rows() != y.rows() || output.cols() != y.cols())
            throw ShapeError("loss: target shape does not match output");
        return (1.0 / n) * (output - y);
    }
    if (y.rows() != output.rows() || y.cols() != 1)
        throw ShapeError("loss: cross_entropy expects an n x 1 label column");
    Matrix g(output.rows(), output.cols());
    for (std::size_t r = 0; r < output.rows(); ++r) {
        auto row = output.row_span(r);
        auto grow = g.row_span(r);
        const auto label = static_cast<std::size_t>(y(r, 0));
        if (label >= row.size())
            throw ShapeError("loss: class label out of range");
        const double m = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double v : row)
            z += std::exp(v - m);
        for (std::size_t c = 0; c < row.size(); ++c)
            grow[c] = std::exp(row[c] - m) / z / n;
        grow[label] -= 1.0 / n;
    }
    return g;
}

LossAndGrad loss_and_grad(const QNetState& net, const Matrix& x, const Matrix& y, LossKind loss)
{
    if (x.rows() != y.rows())
        throw ShapeError("loss_and_grad: batch sizes of x and y differ");
    ForwardResult fr = forward(net, x);
    LossAndGrad out;
    out.loss = loss_value(fr.output, y, loss);
    out.grads = backward_ste(net, fr.tape, loss_gradient(fr.output, y, loss));
    return out;
}

double prediction_error_quantized(const QNetState& net, const Matrix& x, const Matrix& y)
{
    if (x.rows() == 0)
        throw ShapeError("prediction_error_quantized: empty dataset");
    const Matrix out = predict(net, x);
    if (out.rows() != y.rows() || out.cols() != y.cols())
        throw ShapeError("prediction_error_quantized: target shape does not match output");
    return frobenius_sq(out - y) / static_cast<double>(x.rows());
}

double classification_error(const QNetState& net, const Matrix& x, const Matrix& labels)
{
    const Matrix out = predict(net, x);
    std::size_t wrong = 0;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row_span(r);
        const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        if (pred != static_cast<std::size_t>(labels(r, 0)))
            ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(out.rows());
}

std::string to_string(Activation a)
{
    return a == Activation::relu ? "relu" : "none";
}

Activation parse_activation(const std::string& s)
{
    if (s == "relu")
        return Activation::relu;
    if (s == "none")
        return Activation::none;
    throw ConfigError("unknown activation '" + s + "'");
}

std::string to_string(LossKind k)
{
    return k == LossKind::quadratic ? "quadratic" : "cross_entropy";
}

LossKind parse_loss_kind(const std::string& s)
{
    if (s == "quadratic")
        return LossKind::quadratic;
    if (s == "cross_entropy")
        return LossKind::cross_entropy;
    throw ConfigError("unknown loss kind '" + s + "'");
}

} // namespace roste
