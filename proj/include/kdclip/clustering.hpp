#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kdclip/matrix.hpp"

namespace kdclip {

struct KMeansModel {
    Matrix centroids;  // K x d
    std::size_t k = 0;
    double inertia = 0.0;
    int iterations = 0;
    std::uint64_t seed = 0;
    std::vector<double> inertiaHistory;  // after each assignment pass
};

// Hard cluster assignments; "soft" refers to their role as pseudo-labels.
struct SoftConceptLabels {
    std::vector<std::uint32_t> labels;
    std::size_t k = 0;
};

struct ClusterStats {
    std::vector<std::size_t> sizes;
    double normalizedSizeEntropy = 1.0;  // H(sizes/n)/ln K, 1.0 when K == 1
    bool hasGroundTruth = false;
    std::vector<double> perClusterTopLabelFraction;  // nonempty clusters only when gt given
    double meanTopLabelFraction = 0.0;
    double purity = 0.0;  // sum of per-cluster top-label counts / n

    std::string to_json() const;
};

// k-means++ seeding then Lloyd until max centroid displacement <= tol or
// maxIters. Empty clusters are reseeded at the point farthest from its
// assigned centroid. Deterministic given seed. Inertia is checked to be
// non-increasing across assignment passes.
std::pair<KMeansModel, SoftConceptLabels> kmeans_fit(const Matrix& points,
                                                     std::size_t k, int maxIters,
                                                     double tol, std::uint64_t seed);

// Lloyd from explicit initial centroids (no seeding). Exposed for tests and
// for reproducing runs from persisted centroids.
std::pair<KMeansModel, SoftConceptLabels> kmeans_fit_from(Matrix initialCentroids,
                                                          const Matrix& points,
                                                          int maxIters, double tol);

// Nearest centroid by squared euclidean distance; ties to lowest index.
SoftConceptLabels kmeans_assign(const KMeansModel& model, const Matrix& points);

Matrix one_hot(const SoftConceptLabels& labels);

ClusterStats cluster_stats(const SoftConceptLabels& labels,
                           const std::vector<int>* groundTruth = nullptr);

// Labels file: one integer per line.
void save_labels(const std::string& path, const SoftConceptLabels& labels);
SoftConceptLabels load_labels(const std::string& path, std::size_t k);

struct PcaResult {
    Matrix projected;   // n x 2
    Matrix components;  // 2 x d, orthonormal rows
    double eigenvalues[2] = {0.0, 0.0};
    bool degenerate = false;  // a component had ~zero variance and is arbitrary
};

// Center, then top-2 principal directions by power iteration with deflation
// (200 iterations, tol 1e-10, fixed start vector).
PcaResult pca_project_2d(const Matrix& points);

}  // namespace kdclip
