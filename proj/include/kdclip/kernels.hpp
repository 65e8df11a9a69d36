#pragma once

#include <cstdint>
#include <vector>

#include "kdclip/matrix.hpp"

// Hot inner loops, each in two drivers: kdclip::serial (plain loops, the
// reference used by the parity tests and the benchmark baseline) and
// kdclip::par (OpenMP over rows). Both call the same per-row routines in
// kdclip::kern, and every output element is written by exactly one
// iteration with a fixed accumulation order, so results are bit-identical
// between the two drivers and across thread counts.

namespace kdclip::kern {

// out row i of A*B: i-k-j order, vectorizes over j.
inline void matmul_row(const double* a, const Matrix& b, double* out) {
    const std::size_t kdim = b.rows(), n = b.cols();
    for (std::size_t j = 0; j < n; ++j) out[j] = 0.0;
    for (std::size_t k = 0; k < kdim; ++k) {
        const double aik = a[k];
        const double* brow = b.row(k);
        for (std::size_t j = 0; j < n; ++j) out[j] += aik * brow[j];
    }
}

// out row i of A*B^T: dot of a with each row of B.
inline void matmul_abt_row(const double* a, const Matrix& b, double* out) {
    const std::size_t kdim = b.cols(), n = b.rows();
    for (std::size_t j = 0; j < n; ++j) {
        const double* brow = b.row(j);
        double acc = 0.0;
        for (std::size_t k = 0; k < kdim; ++k) acc += a[k] * brow[k];
        out[j] = acc;
    }
}

// acc row k += scale * (A^T B) row k, i.e. sum_i A(i,k) * B(i,:).
inline void matmul_atb_row_acc(const Matrix& a, const Matrix& b, std::size_t k,
                               double scale, double* acc) {
    const std::size_t m = a.rows(), n = b.cols();
    for (std::size_t i = 0; i < m; ++i) {
        const double w = scale * a(i, k);
        const double* brow = b.row(i);
        for (std::size_t j = 0; j < n; ++j) acc[j] += w * brow[j];
    }
}

void softmax_row(const double* in, double* out, std::size_t n);
void l2norm_row(const double* in, double* out, std::size_t n, double eps);

// Nearest centroid by squared euclidean distance, ties to lowest index.
std::uint32_t nearest_centroid(const double* p, const Matrix& centroids,
                               double& bestDist);

}  // namespace kdclip::kern

namespace kdclip::serial {

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_abt(const Matrix& a, const Matrix& b);
void matmul_atb_acc(const Matrix& a, const Matrix& b, double scale, Matrix& acc);
Matrix softmax_rows(const Matrix& m);
Matrix l2_normalize_rows(const Matrix& m, double eps);
void assign_nearest(const Matrix& points, const Matrix& centroids,
                    std::vector<std::uint32_t>& labels, std::vector<double>& dists);

}  // namespace kdclip::serial

namespace kdclip::par {

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_abt(const Matrix& a, const Matrix& b);
void matmul_atb_acc(const Matrix& a, const Matrix& b, double scale, Matrix& acc);
Matrix softmax_rows(const Matrix& m);
Matrix l2_normalize_rows(const Matrix& m, double eps);
void assign_nearest(const Matrix& points, const Matrix& centroids,
                    std::vector<std::uint32_t>& labels, std::vector<double>& dists);

}  // namespace kdclip::par
