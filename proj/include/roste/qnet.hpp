#pragma once

// Feedforward networks of rotated quantized linear layers
//
//   LIN_i(X) = act( Q_x(X R_i) * Q_w(R_i^T W_i) )
//
// trained with the straight-through estimator: dQ/d(input) is taken as the
// identity for both quantizers, while s(X) and z(X) are held constant.

#include "roste/hadamard.hpp"
#include "roste/numkit.hpp"
#include "roste/quant.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace roste {

enum class Activation { none, relu };
enum class LossKind { quadratic, cross_entropy };

struct LayerParams {
    Matrix weight; // in_dim x out_dim
    RotationChoice rotation;
    // nullopt disables the quantizer (exact identity map).
    std::optional<QuantSpec> w_spec;
    std::optional<QuantSpec> x_spec;
    Activation activation = Activation::none;

    std::size_t in_dim() const noexcept { return weight.rows(); }
    std::size_t out_dim() const noexcept { return weight.cols(); }
};

struct QNetState {
    std::vector<LayerParams> layers;

    // Throws ShapeError on broken chains, UnsupportedDimension / DomainError on
    // invalid rotations or specs.
    void validate() const;
    std::size_t in_dim() const;
    std::size_t out_dim() const;
    std::vector<RotationChoice> rotations() const;
    void set_rotations(const std::vector<RotationChoice>& rotations);
    std::vector<Matrix> weights() const;
};

// Q_w on an already rotated weight. Per-row grouping means one group per output
// channel, i.e. per column of the in_dim x out_dim storage.
Matrix quantize_weight(const Matrix& rotated_weight, const std::optional<QuantSpec>& spec);
// Q_x on already rotated activations. Each sample (row) is its own tensor, so
// per_tensor and per_row grouping coincide.
Matrix quantize_activation(const Matrix& rotated_input, const std::optional<QuantSpec>& spec);

struct LayerTape {
    Matrix input;          // X
    Matrix rotated_input;  // X R
    Matrix q_input;        // Q_x(X R)
    Matrix rotated_weight; // R^T W
    Matrix q_weight;       // Q_w(R^T W)
    Matrix pre_activation; // Q_x(X R) Q_w(R^T W)
};

struct Tape {
    std::vector<LayerTape> layers;
    std::uint64_t fingerprint = 0; // of the network the tape was recorded on
};

struct ForwardResult {
    Matrix output;
    Tape tape;
};

std::uint64_t fingerprint(const QNetState& net);

ForwardResult forward(const QNetState& net, const Matrix& x);
// Forward without recording a tape.
Matrix predict(const QNetState& net, const Matrix& x);
// Forward with every quantizer disabled; the full-precision reference network.
Matrix predict_full_precision(const QNetState& net, const Matrix& x);

// Per-layer gradients dL/dW_i given dL/d(output). Throws UsageError when the tape
// was recorded on a different network state.
std::vector<Matrix> backward_ste(const QNetState& net, const Tape& tape, const Matrix& loss_grad);

// quadratic:     0.5 * mean_n sum_k (o_nk - y_nk)^2
// cross_entropy: mean_n -log softmax(o_n)[y_n], y holds class indices (n x 1)
double loss_value(const Matrix& output, const Matrix& y, LossKind loss);
Matrix loss_gradient(const Matrix& output, const Matrix& y, LossKind loss);

struct LossAndGrad {
    double loss = 0.0;
    std::vector<Matrix> grads;
};

LossAndGrad loss_and_grad(const QNetState& net, const Matrix& x, const Matrix& y, LossKind loss);

// Mean squared prediction error mean_n ||m_Q(x_n) - y_n||^2 of the deployed
// quantized model. For the scalar linear model with exact labels this equals
// ||Q_w(R w) - w*_R||_G^2.
double prediction_error_quantized(const QNetState& net, const Matrix& x, const Matrix& y);

// Fraction of rows whose argmax output differs from the class label.
double classification_error(const QNetState& net, const Matrix& x, const Matrix& labels);

std::string to_string(Activation a);
Activation parse_activation(const std::string& s);
std::string to_string(LossKind k);
LossKind parse_loss_kind(const std::string& s);

} // namespace roste
