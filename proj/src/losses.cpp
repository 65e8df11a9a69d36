#include "kdclip/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "kdclip/numerics.hpp"

namespace kdclip {

LossBreakdown loss_total(double emb, double conc, double cont, double alpha,
                         double beta, double gamma) {
    if (alpha < 0 || beta < 0 || gamma < 0)
        throw std::invalid_argument("loss_total: weights must be >= 0");
    LossBreakdown b;
    b.emb = emb;
    b.conc = conc;
    b.cont = cont;
    b.alpha = alpha;
    b.beta = beta;
    b.gamma = gamma;
    b.total = alpha * emb + beta * conc + gamma * cont;
    return b;
}

ParamTensor make_temperature(double initial) {
    Matrix t(1, 1);
    t(0, 0) = initial;
    return ParamTensor(std::move(t), "temperature");
}

double loss_emb(const Matrix& studentText, LinearProjector& we, const Matrix& teacher,
                Reduction reduction, double weight, Matrix* dStudentAcc) {
    if (studentText.rows() != teacher.rows())
        throw std::invalid_argument("loss_emb: batch mismatch " +
                                    studentText.shape_str() + " vs " +
                                    teacher.shape_str());
    Matrix projected = we.project(studentText);
    if (projected.cols() != teacher.cols())
        throw std::invalid_argument("loss_emb: projector output " +
                                    projected.shape_str() + " vs teacher " +
                                    teacher.shape_str());

    const double scale =
        reduction == Reduction::Mean ? 1.0 / static_cast<double>(studentText.rows()) : 1.0;

    double value = 0.0;
    Matrix residual(projected.rows(), projected.cols());
    for (std::size_t i = 0; i < projected.size(); ++i) {
        const double r = projected.data()[i] - teacher.data()[i];
        residual.data()[i] = r;
        value += r * r;
    }
    value *= scale;

    if (dStudentAcc) {
        Matrix dProjected(residual.rows(), residual.cols());
        const double g = 2.0 * scale * weight;
        for (std::size_t i = 0; i < residual.size(); ++i)
            dProjected.data()[i] = g * residual.data()[i];
        Matrix dStudent = we.backward(studentText, dProjected);
        add_scaled(*dStudentAcc, dStudent, 1.0);
    }
    return value;
}

double loss_conc(const Matrix& probs, const Matrix& onehot, double eps,
                 Reduction reduction, double weight, Matrix* dProbsAcc) {
    if (!probs.same_shape(onehot))
        throw std::invalid_argument("loss_conc: shape mismatch " + probs.shape_str() +
                                    " vs " + onehot.shape_str());
    const double scale =
        reduction == Reduction::Mean ? 1.0 / static_cast<double>(probs.rows()) : 1.0;

    double value = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double s = onehot.data()[i];
        if (s == 0.0) continue;
        value -= s * std::log(std::max(probs.data()[i], eps));
    }
    value *= scale;

    if (dProbsAcc) {
        const double g = scale * weight;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            const double s = onehot.data()[i];
            if (s == 0.0) continue;
            const double p = probs.data()[i];
            if (p > eps) dProbsAcc->data()[i] -= g * s / p;
            // clamped entries are constant w.r.t. p
        }
    }
    return value;
}

double loss_contrastive(const Matrix& textEmb, const Matrix& imageEmb,
                        ParamTensor& temperature, double weight, Matrix* dTextAcc,
                        Matrix* dImageAcc) {
    if (textEmb.rows() != imageEmb.rows() || textEmb.cols() != imageEmb.cols())
        throw std::invalid_argument("loss_contrastive: shape mismatch " +
                                    textEmb.shape_str() + " vs " +
                                    imageEmb.shape_str());
    const std::size_t n = textEmb.rows();
    if (n < 1) throw std::invalid_argument("loss_contrastive: empty batch");

    const double expT = std::exp(temperature.value(0, 0));
    if (!std::isfinite(expT) || expT <= 0.0)
        throw std::runtime_error("loss_contrastive: non-finite temperature");

    const Matrix tn = l2_normalize_rows(textEmb);
    const Matrix in = l2_normalize_rows(imageEmb);

    // logits(i, j) = <image_i, text_j> * exp(t)
    Matrix logits = par::matmul_abt(in, tn);
    for (std::size_t i = 0; i < logits.size(); ++i) logits.data()[i] *= expT;

    const Matrix rowProbs = softmax_rows(logits);

    // Column softmax via the transpose.
    Matrix logitsT(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) logitsT(j, i) = logits(i, j);
    const Matrix colProbsT = softmax_rows(logitsT);

    double rowCe = 0.0, colCe = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        rowCe -= std::log(std::max(rowProbs(i, i), kProbClamp));
        colCe -= std::log(std::max(colProbsT(i, i), kProbClamp));
    }
    const double invN = 1.0 / static_cast<double>(n);
    const double value = 0.5 * (rowCe + colCe) * invN;

    if (dTextAcc || dImageAcc) {
        // d/dlogits of mean CE with diagonal targets: (p - I)/n, averaged
        // over the row-wise and column-wise terms.
        Matrix dLogits(n, n);
        const double half = 0.5 * invN * weight;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const double target = i == j ? 1.0 : 0.0;
                dLogits(i, j) = half * ((rowProbs(i, j) - target) +
                                        (colProbsT(j, i) - target));
            }

        if (!temperature.frozen) {
            double dT = 0.0;  // dlogits/dt = logits
            for (std::size_t i = 0; i < dLogits.size(); ++i)
                dT += dLogits.data()[i] * logits.data()[i];
            temperature.grad(0, 0) += dT;
        }

        // logits = expT * In Tn^T
        Matrix dIn = par::matmul(dLogits, tn);
        for (std::size_t i = 0; i < dIn.size(); ++i) dIn.data()[i] *= expT;
        Matrix dLogitsT(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) dLogitsT(j, i) = dLogits(i, j);
        Matrix dTn = par::matmul(dLogitsT, in);
        for (std::size_t i = 0; i < dTn.size(); ++i) dTn.data()[i] *= expT;

        if (dTextAcc) add_scaled(*dTextAcc, l2_normalize_backward_rows(textEmb, dTn), 1.0);
        if (dImageAcc) add_scaled(*dImageAcc, l2_normalize_backward_rows(imageEmb, dIn), 1.0);
    }
    return value;
}

}  // namespace kdclip
