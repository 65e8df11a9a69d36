#include "kdclip/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "kdclip/kernels.hpp"
#include "kdclip/rng.hpp"

namespace kdclip {

namespace {

constexpr double kInertiaSlack = 1e-9;

// C(n, k), capped so the intermediate product cannot overflow.
std::size_t subset_count(std::size_t n, std::size_t k) {
    constexpr std::size_t kCap = 1u << 20;
    std::size_t c = 1;
    for (std::size_t j = 1; j <= k; ++j) {
        c = c * (n - k + j) / j;
        if (c > kCap) return kCap;
    }
    return c;
}

double sq_dist(const double* a, const double* b, std::size_t d) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double diff = a[j] - b[j];
        acc += diff * diff;
    }
    return acc;
}

// Greedy k-means++: each step draws several candidates by D^2 sampling and
// keeps the one that lowers the total potential the most.
Matrix kmeanspp_init(const Matrix& points, std::size_t k, Rng& rng) {
    const std::size_t n = points.rows(), d = points.cols();
    Matrix centroids(k, d);
    std::vector<double> best(n, 0.0);

    std::size_t first = rng.index(n);
    std::copy_n(points.row(first), d, centroids.row(0));
    for (std::size_t i = 0; i < n; ++i)
        best[i] = sq_dist(points.row(i), centroids.row(0), d);

    const int candidates =
        2 + static_cast<int>(std::log(static_cast<double>(k)));
    std::vector<double> trial(n), bestTrial(n);
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (double v : best) total += v;
        std::size_t bestPick = n;
        double bestPotential = std::numeric_limits<double>::infinity();
        for (int cand = 0; cand < candidates; ++cand) {
            std::size_t pick;
            if (total > 0.0) {
                // D^2 sampling via the cumulative sum.
                double target = rng.uniform01() * total;
                pick = n - 1;
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    acc += best[i];
                    if (target < acc) {
                        pick = i;
                        break;
                    }
                }
            } else {
                pick = rng.index(n);  // all points coincide with a centroid
            }
            double potential = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                trial[i] = std::min(best[i], sq_dist(points.row(i), points.row(pick), d));
                potential += trial[i];
            }
            if (potential < bestPotential) {
                bestPotential = potential;
                bestPick = pick;
                std::swap(trial, bestTrial);
            }
        }
        std::copy_n(points.row(bestPick), d, centroids.row(c));
        std::swap(best, bestTrial);
    }
    return centroids;
}

// One Lloyd loop over explicit initial centroids. Assignment is parallel
// (kernels); accumulation is serial so results are thread-count invariant.
std::pair<KMeansModel, SoftConceptLabels> lloyd(Matrix centroids, const Matrix& points,
                                                int maxIters, double tol,
                                                std::uint64_t seed) {
    const std::size_t n = points.rows(), d = points.cols(), k = centroids.rows();
    KMeansModel model;
    model.k = k;
    model.seed = seed;

    std::vector<std::uint32_t> labels;
    std::vector<double> dists;
    double prevInertia = std::numeric_limits<double>::infinity();

    for (int iter = 0; iter < maxIters; ++iter) {
        par::assign_nearest(points, centroids, labels, dists);
        double inertia = 0.0;
        for (double v : dists) inertia += v;
        if (inertia > prevInertia + kInertiaSlack)
            throw std::runtime_error("kmeans: inertia increased across iterations");
        model.inertiaHistory.push_back(inertia);
        prevInertia = inertia;

        Matrix sums(k, d);
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const double* p = points.row(i);
            double* s = sums.row(labels[i]);
            for (std::size_t j = 0; j < d; ++j) s[j] += p[j];
            ++counts[labels[i]];
        }

        // Empty clusters: reseed at the point farthest from its centroid,
        // excluding points already used for a repair this round.
        std::vector<bool> used(n, false);
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] > 0) continue;
            std::size_t farthest = n;
            double farDist = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (!used[i] && dists[i] > farDist) {
                    farDist = dists[i];
                    farthest = i;
                }
            }
            if (farthest == n || farDist <= 0.0) continue;  // fully degenerate data
            used[farthest] = true;
            std::copy_n(points.row(farthest), d, sums.row(c));
            counts[c] = 1;
        }

        double maxShift = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            const double inv = 1.0 / static_cast<double>(counts[c]);
            double* crow = centroids.row(c);
            const double* srow = sums.row(c);
            double shift = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double updated = srow[j] * inv;
                const double diff = updated - crow[j];
                shift += diff * diff;
                crow[j] = updated;
            }
            maxShift = std::max(maxShift, std::sqrt(shift));
        }

        model.iterations = iter + 1;
        if (maxShift <= tol) break;
    }

    // Final assignment so labels are consistent with returned centroids.
    par::assign_nearest(points, centroids, labels, dists);
    double inertia = 0.0;
    for (double v : dists) inertia += v;
    if (inertia > prevInertia + kInertiaSlack)
        throw std::runtime_error("kmeans: inertia increased at final assignment");
    model.inertiaHistory.push_back(inertia);
    model.inertia = inertia;
    model.centroids = std::move(centroids);

    SoftConceptLabels out;
    out.labels = std::move(labels);
    out.k = k;
    return {std::move(model), std::move(out)};
}

}  // namespace

std::pair<KMeansModel, SoftConceptLabels> kmeans_fit(const Matrix& points,
                                                     std::size_t k, int maxIters,
                                                     double tol, std::uint64_t seed) {
    const std::size_t n = points.rows();
    if (k < 1) throw std::invalid_argument("kmeans_fit: k must be >= 1");
    if (k > n)
        throw std::invalid_argument("kmeans_fit: k=" + std::to_string(k) +
                                    " exceeds point count n=" + std::to_string(n));
    if (maxIters < 1) throw std::invalid_argument("kmeans_fit: maxIters must be >= 1");
    if (tol < 0) throw std::invalid_argument("kmeans_fit: tol must be >= 0");

    // Seeding strategy. A single k-means++ run regularly lands in a local
    // optimum, so the fit keeps the lowest-inertia result over several
    // deterministic seeding rounds. For inputs small enough to enumerate,
    // every distinct k-subset of points is tried instead; D^2 sampling almost
    // never separates close pairs, which some tiny optima require.
    constexpr int kSeedingRounds = 8;
    constexpr std::size_t kExhaustiveSeedLimit = 256;

    std::pair<KMeansModel, SoftConceptLabels> best;
    bool haveBest = false;
    auto consider = [&](Matrix centroids) {
        auto run = lloyd(std::move(centroids), points, maxIters, tol, seed);
        if (!haveBest || run.first.inertia < best.first.inertia) {
            best = std::move(run);
            haveBest = true;
        }
    };

    if (subset_count(n, k) <= kExhaustiveSeedLimit) {
        std::vector<std::size_t> idx(k);
        for (std::size_t j = 0; j < k; ++j) idx[j] = j;
        for (;;) {
            Matrix centroids(k, points.cols());
            for (std::size_t j = 0; j < k; ++j)
                std::copy_n(points.row(idx[j]), points.cols(), centroids.row(j));
            consider(std::move(centroids));
            // Advance to the next k-combination of {0..n-1}.
            std::size_t j = k;
            while (j > 0 && idx[j - 1] == n - k + (j - 1)) --j;
            if (j == 0) break;
            ++idx[j - 1];
            for (std::size_t m = j; m < k; ++m) idx[m] = idx[m - 1] + 1;
        }
    } else {
        for (int round = 0; round < kSeedingRounds; ++round) {
            Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(round));
            consider(kmeanspp_init(points, k, rng));
        }
    }
    return best;
}

std::pair<KMeansModel, SoftConceptLabels> kmeans_fit_from(Matrix initialCentroids,
                                                          const Matrix& points,
                                                          int maxIters, double tol) {
    if (initialCentroids.cols() != points.cols())
        throw std::invalid_argument("kmeans_fit_from: dim mismatch " +
                                    initialCentroids.shape_str() + " vs " +
                                    points.shape_str());
    return lloyd(std::move(initialCentroids), points, maxIters, tol, 0);
}

SoftConceptLabels kmeans_assign(const KMeansModel& model, const Matrix& points) {
    if (points.cols() != model.centroids.cols())
        throw std::invalid_argument("kmeans_assign: dim mismatch " +
                                    points.shape_str() + " vs " +
                                    model.centroids.shape_str());
    std::vector<std::uint32_t> labels;
    std::vector<double> dists;
    par::assign_nearest(points, model.centroids, labels, dists);
    return {std::move(labels), model.k};
}

Matrix one_hot(const SoftConceptLabels& labels) {
    Matrix out(labels.labels.size(), labels.k);
    for (std::size_t i = 0; i < labels.labels.size(); ++i) {
        if (labels.labels[i] >= labels.k)
            throw std::invalid_argument("one_hot: label out of range");
        out(i, labels.labels[i]) = 1.0;
    }
    return out;
}

ClusterStats cluster_stats(const SoftConceptLabels& labels,
                           const std::vector<int>* groundTruth) {
    const std::size_t n = labels.labels.size();
    const std::size_t k = labels.k;
    if (groundTruth && groundTruth->size() != n)
        throw std::invalid_argument("cluster_stats: ground truth length " +
                                    std::to_string(groundTruth->size()) +
                                    " != label count " + std::to_string(n));

    ClusterStats stats;
    stats.sizes.assign(k, 0);
    for (std::uint32_t l : labels.labels) {
        if (l >= k) throw std::invalid_argument("cluster_stats: label out of range");
        ++stats.sizes[l];
    }

    if (k <= 1) {
        stats.normalizedSizeEntropy = 1.0;
    } else {
        double h = 0.0;
        for (std::size_t s : stats.sizes) {
            if (s == 0) continue;
            const double p = static_cast<double>(s) / static_cast<double>(n);
            h -= p * std::log(p);
        }
        stats.normalizedSizeEntropy = h / std::log(static_cast<double>(k));
    }

    if (groundTruth) {
        stats.hasGroundTruth = true;
        std::vector<std::map<int, std::size_t>> counts(k);
        for (std::size_t i = 0; i < n; ++i)
            ++counts[labels.labels[i]][(*groundTruth)[i]];
        std::size_t topTotal = 0;
        for (std::size_t c = 0; c < k; ++c) {
            if (stats.sizes[c] == 0) continue;
            std::size_t top = 0;
            for (const auto& [label, cnt] : counts[c]) top = std::max(top, cnt);
            topTotal += top;
            stats.perClusterTopLabelFraction.push_back(
                static_cast<double>(top) / static_cast<double>(stats.sizes[c]));
        }
        for (double f : stats.perClusterTopLabelFraction)
            stats.meanTopLabelFraction += f;
        if (!stats.perClusterTopLabelFraction.empty())
            stats.meanTopLabelFraction /=
                static_cast<double>(stats.perClusterTopLabelFraction.size());
        stats.purity = static_cast<double>(topTotal) / static_cast<double>(n);
    }
    return stats;
}

std::string ClusterStats::to_json() const {
    nlohmann::json j;
    j["sizes"] = sizes;
    j["normalized_size_entropy"] = normalizedSizeEntropy;
    if (hasGroundTruth) {
        j["per_cluster_top_label_fraction"] = perClusterTopLabelFraction;
        j["mean_top_label_fraction"] = meanTopLabelFraction;
        j["purity"] = purity;
    }
    return j.dump();
}

void save_labels(const std::string& path, const SoftConceptLabels& labels) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_labels: cannot open " + path);
    for (std::uint32_t l : labels.labels) f << l << "\n";
}

SoftConceptLabels load_labels(const std::string& path, std::size_t k) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_labels: cannot open " + path);
    SoftConceptLabels out;
    out.k = k;
    std::uint32_t l = 0;
    while (f >> l) {
        if (l >= k)
            throw std::runtime_error("load_labels: label " + std::to_string(l) +
                                     " out of range for k=" + std::to_string(k));
        out.labels.push_back(l);
    }
    return out;
}

// ---------------------------------------------------------------------------
// PCA

namespace {

// Largest eigenpair of a symmetric matrix by power iteration, with optional
// orthogonalization against an already-found direction.
double power_iteration(const Matrix& sym, std::vector<double>& v,
                       const std::vector<double>* against) {
    const std::size_t d = sym.rows();
    auto orthogonalize = [&](std::vector<double>& x) {
        if (!against) return;
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += x[j] * (*against)[j];
        for (std::size_t j = 0; j < d; ++j) x[j] -= dot * (*against)[j];
    };
    auto normalize = [&](std::vector<double>& x) {
        double sq = 0.0;
        for (double a : x) sq += a * a;
        const double norm = std::sqrt(sq);
        if (norm > 0)
            for (double& a : x) a /= norm;
        return norm;
    };

    orthogonalize(v);
    normalize(v);
    std::vector<double> next(d, 0.0);
    for (int iter = 0; iter < 200; ++iter) {
        for (std::size_t i = 0; i < d; ++i) {
            double acc = 0.0;
            const double* row = sym.row(i);
            for (std::size_t j = 0; j < d; ++j) acc += row[j] * v[j];
            next[i] = acc;
        }
        orthogonalize(next);
        if (normalize(next) == 0.0) break;  // v in the null space
        double diff = 0.0, diffNeg = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            diff += (next[j] - v[j]) * (next[j] - v[j]);
            diffNeg += (next[j] + v[j]) * (next[j] + v[j]);
        }
        v = next;
        if (std::min(std::sqrt(diff), std::sqrt(diffNeg)) <= 1e-10) break;
    }
    double lambda = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        const double* row = sym.row(i);
        for (std::size_t j = 0; j < d; ++j) acc += row[j] * v[j];
        lambda += v[i] * acc;
    }
    return lambda;
}

}  // namespace

PcaResult pca_project_2d(const Matrix& points) {
    const std::size_t n = points.rows(), d = points.cols();
    if (n < 2) throw std::invalid_argument("pca_project_2d: need at least 2 points");
    if (d < 2) throw std::invalid_argument("pca_project_2d: need dimension >= 2");

    Matrix centered(n, d);
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = points.row(i);
        for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
    }
    for (double& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            centered(i, j) = points(i, j) - mean[j];

    // Scatter matrix X^T X (d x d).
    Matrix scatter(d, d);
    serial::matmul_atb_acc(centered, centered, 1.0, scatter);
    double trace = 0.0;
    for (std::size_t j = 0; j < d; ++j) trace += scatter(j, j);

    PcaResult result;
    result.components = Matrix(2, d);
    const double floor = std::max(trace, 1.0) * 1e-12;

    std::vector<double> v1(d), v2(d);
    Rng startRng(0x9c0ffee5u);  // fixed start vector
    for (std::size_t j = 0; j < d; ++j) v1[j] = startRng.gaussian();
    for (std::size_t j = 0; j < d; ++j) v2[j] = startRng.gaussian();

    result.eigenvalues[0] = power_iteration(scatter, v1, nullptr);
    if (result.eigenvalues[0] <= floor) {
        result.degenerate = true;
        v1.assign(d, 0.0);
        v1[0] = 1.0;
    }

    // Deflate and repeat.
    Matrix deflated = scatter;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            deflated(i, j) -= result.eigenvalues[0] * v1[i] * v1[j];
    result.eigenvalues[1] = power_iteration(deflated, v2, &v1);
    if (result.eigenvalues[1] <= floor) {
        result.degenerate = true;
        // Arbitrary direction orthogonal to v1.
        std::size_t axis = 0;
        for (std::size_t j = 1; j < d; ++j)
            if (std::abs(v1[j]) < std::abs(v1[axis])) axis = j;
        v2.assign(d, 0.0);
        v2[axis] = 1.0;
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += v2[j] * v1[j];
        for (std::size_t j = 0; j < d; ++j) v2[j] -= dot * v1[j];
        double sq = 0.0;
        for (double a : v2) sq += a * a;
        for (double& a : v2) a /= std::sqrt(sq);
    }

    for (std::size_t j = 0; j < d; ++j) {
        result.components(0, j) = v1[j];
        result.components(1, j) = v2[j];
    }
    result.projected = serial::matmul_abt(centered, result.components);
    return result;
}

}  // namespace kdclip
