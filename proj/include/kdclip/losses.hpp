#pragma once

#include <cmath>

#include "kdclip/matrix.hpp"
#include "kdclip/models.hpp"

namespace kdclip {

enum class Reduction { Sum, Mean };

struct LossBreakdown {
    double emb = 0.0;
    double conc = 0.0;
    double cont = 0.0;
    double total = 0.0;
    double alpha = 1.0;
    double beta = 0.01;
    double gamma = 1.0;
};

// total = alpha*emb + beta*conc + gamma*cont.
LossBreakdown loss_total(double emb, double conc, double cont, double alpha,
                         double beta, double gamma);

// Learned log-temperature for the contrastive logits, stored as a 1x1
// ParamTensor. Default exp(t) = 1/0.07.
ParamTensor make_temperature(double initial = std::log(1.0 / 0.07));

// Squared-residual distillation: sum_i || student_i * W - teacher_i ||^2.
// Returns the raw (unweighted) value. When dStudentAcc is non-null the
// backward pass runs with gradients scaled by weight: W.grad accumulates
// and *dStudentAcc += weight * dL/dStudent.
double loss_emb(const Matrix& studentText, LinearProjector& we, const Matrix& teacher,
                Reduction reduction, double weight, Matrix* dStudentAcc);

// Cross-entropy of probability rows against one-hot labels, with
// probabilities clamped at eps. dProbsAcc += weight * dL/dProbs.
double loss_conc(const Matrix& probs, const Matrix& onehot, double eps,
                 Reduction reduction, double weight, Matrix* dProbsAcc);

// Symmetric InfoNCE over l2-normalized rows: logits = In * Tn^T * exp(t),
// diagonal targets, mean over items of (row CE + column CE)/2. Gradients
// go to both embedding batches and to the temperature (unless frozen).
double loss_contrastive(const Matrix& textEmb, const Matrix& imageEmb,
                        ParamTensor& temperature, double weight, Matrix* dTextAcc,
                        Matrix* dImageAcc);

constexpr double kProbClamp = 1e-12;

}  // namespace kdclip
