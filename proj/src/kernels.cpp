#include "kdclip/kernels.hpp"

#include <cmath>
#include <stdexcept>

namespace kdclip {

namespace kern {

void softmax_row(const double* in, double* out, std::size_t n) {
    double mx = in[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        out[j] = std::exp(in[j] - mx);
        sum += out[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < n; ++j) out[j] *= inv;
}

void l2norm_row(const double* in, double* out, std::size_t n, double eps) {
    double sq = 0.0;
    for (std::size_t j = 0; j < n; ++j) sq += in[j] * in[j];
    const double inv = 1.0 / std::max(std::sqrt(sq), eps);
    for (std::size_t j = 0; j < n; ++j) out[j] = in[j] * inv;
}

std::uint32_t nearest_centroid(const double* p, const Matrix& centroids,
                               double& bestDist) {
    const std::size_t k = centroids.rows(), d = centroids.cols();
    std::uint32_t best = 0;
    bestDist = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        const double* crow = centroids.row(c);
        double dist = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = p[j] - crow[j];
            dist += diff * diff;
        }
        if (c == 0 || dist < bestDist) {
            bestDist = dist;
            best = static_cast<std::uint32_t>(c);
        }
    }
    return best;
}

}  // namespace kern

namespace {

void check_matmul_shapes(const Matrix& a, const Matrix& b, std::size_t bInner,
                         const char* op) {
    if (a.cols() != bInner)
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    a.shape_str() + " vs " + b.shape_str());
}

}  // namespace

// ---------------------------------------------------------------------------
// Serial reference drivers.

namespace serial {

Matrix matmul(const Matrix& a, const Matrix& b) {
    check_matmul_shapes(a, b, b.rows(), "matmul");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        kern::matmul_row(a.row(i), b, out.row(i));
    return out;
}

Matrix matmul_abt(const Matrix& a, const Matrix& b) {
    check_matmul_shapes(a, b, b.cols(), "matmul_abt");
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        kern::matmul_abt_row(a.row(i), b, out.row(i));
    return out;
}

void matmul_atb_acc(const Matrix& a, const Matrix& b, double scale, Matrix& acc) {
    if (a.rows() != b.rows() || acc.rows() != a.cols() || acc.cols() != b.cols())
        throw std::invalid_argument("matmul_atb_acc: shape mismatch " +
                                    a.shape_str() + " vs " + b.shape_str());
    for (std::size_t k = 0; k < acc.rows(); ++k)
        kern::matmul_atb_row_acc(a, b, k, scale, acc.row(k));
}

Matrix softmax_rows(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i)
        kern::softmax_row(m.row(i), out.row(i), m.cols());
    return out;
}

Matrix l2_normalize_rows(const Matrix& m, double eps) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i)
        kern::l2norm_row(m.row(i), out.row(i), m.cols(), eps);
    return out;
}

void assign_nearest(const Matrix& points, const Matrix& centroids,
                    std::vector<std::uint32_t>& labels, std::vector<double>& dists) {
    if (points.cols() != centroids.cols())
        throw std::invalid_argument("assign_nearest: dim mismatch " +
                                    points.shape_str() + " vs " + centroids.shape_str());
    labels.resize(points.rows());
    dists.resize(points.rows());
    for (std::size_t i = 0; i < points.rows(); ++i)
        labels[i] = kern::nearest_centroid(points.row(i), centroids, dists[i]);
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP drivers. Signed index because MSVC-era OpenMP wants it; harmless.

namespace par {

Matrix matmul(const Matrix& a, const Matrix& b) {
    check_matmul_shapes(a, b, b.rows(), "matmul");
    Matrix out(a.rows(), b.cols());
    const auto rows = static_cast<std::int64_t>(a.rows());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < rows; ++i)
        kern::matmul_row(a.row(i), b, out.row(i));
    return out;
}

Matrix matmul_abt(const Matrix& a, const Matrix& b) {
    check_matmul_shapes(a, b, b.cols(), "matmul_abt");
    Matrix out(a.rows(), b.rows());
    const auto rows = static_cast<std::int64_t>(a.rows());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < rows; ++i)
        kern::matmul_abt_row(a.row(i), b, out.row(i));
    return out;
}

void matmul_atb_acc(const Matrix& a, const Matrix& b, double scale, Matrix& acc) {
    if (a.rows() != b.rows() || acc.rows() != a.cols() || acc.cols() != b.cols())
        throw std::invalid_argument("matmul_atb_acc: shape mismatch " +
                                    a.shape_str() + " vs " + b.shape_str());
    const auto rows = static_cast<std::int64_t>(acc.rows());
#pragma omp parallel for schedule(static)
    for (std::int64_t k = 0; k < rows; ++k)
        kern::matmul_atb_row_acc(a, b, k, scale, acc.row(k));
}

Matrix softmax_rows(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    const auto rows = static_cast<std::int64_t>(m.rows());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < rows; ++i)
        kern::softmax_row(m.row(i), out.row(i), m.cols());
    return out;
}

Matrix l2_normalize_rows(const Matrix& m, double eps) {
    Matrix out(m.rows(), m.cols());
    const auto rows = static_cast<std::int64_t>(m.rows());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < rows; ++i)
        kern::l2norm_row(m.row(i), out.row(i), m.cols(), eps);
    return out;
}

void assign_nearest(const Matrix& points, const Matrix& centroids,
                    std::vector<std::uint32_t>& labels, std::vector<double>& dists) {
    if (points.cols() != centroids.cols())
        throw std::invalid_argument("assign_nearest: dim mismatch " +
                                    points.shape_str() + " vs " + centroids.shape_str());
    labels.resize(points.rows());
    dists.resize(points.rows());
    const auto rows = static_cast<std::int64_t>(points.rows());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < rows; ++i)
        labels[i] = kern::nearest_centroid(points.row(i), centroids, dists[i]);
}

}  // namespace par

}  // namespace kdclip
