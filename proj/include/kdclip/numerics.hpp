#pragma once

#include <functional>
#include <span>
#include <string>

#include "kdclip/kernels.hpp"
#include "kdclip/matrix.hpp"

namespace kdclip {

// Forward ops. These dispatch to the OpenMP drivers; the serial reference
// lives in kdclip::serial and is exercised by the parity tests.

Matrix matmul(const Matrix& a, const Matrix& b);

// Rows sum to 1; computed with per-row max subtraction.
Matrix softmax_rows(const Matrix& m);

// Each row divided by max(norm, eps); zero rows stay zero.
Matrix l2_normalize_rows(const Matrix& m, double eps = 1e-12);

// y = x*W + 1*b^T. w is in x out, b is 1 x out.
Matrix affine_forward(const Matrix& x, const ParamTensor& w, const ParamTensor& b);

// Returns dx = dy*W^T; accumulates w.grad += x^T*dy and b.grad += colsum(dy)
// unless the tensor is frozen.
Matrix affine_backward(const Matrix& x, ParamTensor& w, ParamTensor& b,
                       const Matrix& dy);

// Elementwise tanh and its backward given the activation output.
Matrix tanh_map(const Matrix& m);
Matrix tanh_backward(const Matrix& activated, const Matrix& dOut);

// Per-row Jacobian of softmax applied to upstream dProbs:
// dLogits = (diag(p) - pp^T) dProbs per row.
Matrix softmax_backward_rows(const Matrix& probs, const Matrix& dProbs);

// Backward of l2_normalize_rows: raw is the pre-normalization input.
Matrix l2_normalize_backward_rows(const Matrix& raw, const Matrix& dOut,
                                  double eps = 1e-12);

// dst += s * src (shapes must match).
void add_scaled(Matrix& dst, const Matrix& src, double s);

// 1 x cols row vector of column sums.
Matrix colsum(const Matrix& m);

// -------------------------------------------------------------------------
// Finite-difference gradient checker.

struct GradCheckCoord {
    std::string param;
    std::size_t row = 0, col = 0;
    double analytic = 0.0, numeric = 0.0, relError = 0.0;
};

struct GradCheckReport {
    double maxRelError = 0.0;
    bool pass = false;
    bool lossFinite = true;
    GradCheckCoord worst;
    std::size_t coordsChecked = 0;
};

// lossFn must be deterministic; it recomputes the loss and accumulates
// analytic gradients into the listed params (the checker zeroes them first).
// Central differences per coordinate; frozen params are skipped. Fails with
// lossFinite=false (worst names the coordinate) if any probe is non-finite.
GradCheckReport check_gradients(const std::function<double()>& lossFn,
                                std::span<ParamTensor* const> params,
                                double step, double tolerance);

}  // namespace kdclip
