#include "kdclip/numerics.hpp"

#include <cmath>
#include <stdexcept>

namespace kdclip {

Matrix matmul(const Matrix& a, const Matrix& b) { return par::matmul(a, b); }

Matrix softmax_rows(const Matrix& m) { return par::softmax_rows(m); }

Matrix l2_normalize_rows(const Matrix& m, double eps) {
    return par::l2_normalize_rows(m, eps);
}

Matrix affine_forward(const Matrix& x, const ParamTensor& w, const ParamTensor& b) {
    if (x.cols() != w.value.rows())
        throw std::invalid_argument("affine_forward: input " + x.shape_str() +
                                    " incompatible with weight " + w.value.shape_str());
    if (b.value.rows() != 1 || b.value.cols() != w.value.cols())
        throw std::invalid_argument("affine_forward: bias " + b.value.shape_str() +
                                    " incompatible with weight " + w.value.shape_str());
    Matrix y = par::matmul(x, w.value);
    for (std::size_t i = 0; i < y.rows(); ++i) {
        double* yrow = y.row(i);
        const double* brow = b.value.row(0);
        for (std::size_t j = 0; j < y.cols(); ++j) yrow[j] += brow[j];
    }
    return y;
}

Matrix affine_backward(const Matrix& x, ParamTensor& w, ParamTensor& b,
                       const Matrix& dy) {
    if (dy.rows() != x.rows() || dy.cols() != w.value.cols())
        throw std::invalid_argument("affine_backward: upstream " + dy.shape_str() +
                                    " incompatible with weight " + w.value.shape_str());
    if (!w.frozen) par::matmul_atb_acc(x, dy, 1.0, w.grad);
    if (!b.frozen) {
        for (std::size_t i = 0; i < dy.rows(); ++i) {
            const double* dyrow = dy.row(i);
            double* grow = b.grad.row(0);
            for (std::size_t j = 0; j < dy.cols(); ++j) grow[j] += dyrow[j];
        }
    }
    return par::matmul_abt(dy, w.value);
}

Matrix tanh_map(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.size(); ++i) out.data()[i] = std::tanh(m.data()[i]);
    return out;
}

Matrix tanh_backward(const Matrix& activated, const Matrix& dOut) {
    Matrix out(dOut.rows(), dOut.cols());
    for (std::size_t i = 0; i < dOut.size(); ++i) {
        const double a = activated.data()[i];
        out.data()[i] = dOut.data()[i] * (1.0 - a * a);
    }
    return out;
}

Matrix softmax_backward_rows(const Matrix& probs, const Matrix& dProbs) {
    Matrix out(probs.rows(), probs.cols());
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        const double* p = probs.row(i);
        const double* dp = dProbs.row(i);
        double dot = 0.0;
        for (std::size_t j = 0; j < probs.cols(); ++j) dot += p[j] * dp[j];
        double* o = out.row(i);
        for (std::size_t j = 0; j < probs.cols(); ++j) o[j] = p[j] * (dp[j] - dot);
    }
    return out;
}

Matrix l2_normalize_backward_rows(const Matrix& raw, const Matrix& dOut, double eps) {
    Matrix out(raw.rows(), raw.cols());
    for (std::size_t i = 0; i < raw.rows(); ++i) {
        const double* x = raw.row(i);
        const double* g = dOut.row(i);
        double sq = 0.0;
        for (std::size_t j = 0; j < raw.cols(); ++j) sq += x[j] * x[j];
        const double norm = std::sqrt(sq);
        double* o = out.row(i);
        if (norm > eps) {
            const double inv = 1.0 / norm;
            double ydot = 0.0;
            for (std::size_t j = 0; j < raw.cols(); ++j)
                ydot += x[j] * inv * g[j];
            for (std::size_t j = 0; j < raw.cols(); ++j)
                o[j] = (g[j] - x[j] * inv * ydot) * inv;
        } else {
            // Divisor pinned at eps; the map is linear there.
            for (std::size_t j = 0; j < raw.cols(); ++j) o[j] = g[j] / eps;
        }
    }
    return out;
}

void add_scaled(Matrix& dst, const Matrix& src, double s) {
    if (!dst.same_shape(src))
        throw std::invalid_argument("add_scaled: shape mismatch " + dst.shape_str() +
                                    " vs " + src.shape_str());
    for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += s * src.data()[i];
}

Matrix colsum(const Matrix& m) {
    Matrix out(1, m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double* row = m.row(i);
        for (std::size_t j = 0; j < m.cols(); ++j) out(0, j) += row[j];
    }
    return out;
}

GradCheckReport check_gradients(const std::function<double()>& lossFn,
                                std::span<ParamTensor* const> params,
                                double step, double tolerance) {
    if (step <= 0.0) throw std::invalid_argument("check_gradients: step must be > 0");

    GradCheckReport report;

    for (ParamTensor* p : params) p->zero_grad();
    const double base = lossFn();
    if (!std::isfinite(base)) {
        report.lossFinite = false;
        report.worst.param = "<base loss>";
        return report;
    }

    // Snapshot analytic gradients before the probes clobber them.
    std::vector<Matrix> analytic;
    analytic.reserve(params.size());
    for (ParamTensor* p : params) analytic.push_back(p->grad);

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        ParamTensor* p = params[pi];
        if (p->frozen) continue;
        for (std::size_t i = 0; i < p->value.rows(); ++i) {
            for (std::size_t j = 0; j < p->value.cols(); ++j) {
                const double saved = p->value(i, j);

                p->value(i, j) = saved + step;
                for (ParamTensor* q : params) q->zero_grad();
                const double plus = lossFn();

                p->value(i, j) = saved - step;
                for (ParamTensor* q : params) q->zero_grad();
                const double minus = lossFn();

                p->value(i, j) = saved;

                if (!std::isfinite(plus) || !std::isfinite(minus)) {
                    report.lossFinite = false;
                    report.worst = {p->name, i, j, analytic[pi](i, j),
                                    std::nan(""), std::nan("")};
                    report.pass = false;
                    return report;
                }

                const double numeric = (plus - minus) / (2.0 * step);
                const double a = analytic[pi](i, j);
                const double denom =
                    std::max({std::abs(a), std::abs(numeric), 1e-10});
                const double rel = std::abs(a - numeric) / denom;
                ++report.coordsChecked;
                if (rel > report.maxRelError) {
                    report.maxRelError = rel;
                    report.worst = {p->name, i, j, a, numeric, rel};
                }
            }
        }
    }

    // Restore the analytic gradients so callers can keep using them.
    for (std::size_t pi = 0; pi < params.size(); ++pi)
        params[pi]->grad = analytic[pi];

    report.pass = report.lossFinite && report.maxRelError <= tolerance;
    return report;
}

}  // namespace kdclip
