// Compares the serial reference kernels against the OpenMP drivers on
// training-shaped workloads and checks that the outputs are bit-identical.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "kdclip/kernels.hpp"
#include "kdclip/matrix.hpp"
#include "kdclip/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace kdclip;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.gaussian();
    return m;
}

double time_best_of(int reps, const std::function<void()>& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

struct Case {
    std::string name;
    double serialSec = 0.0, parSec = 0.0;
    bool identical = false;
};

void report(const Case& c) {
    std::printf("%-28s serial %8.2f ms   parallel %8.2f ms   speedup %5.2fx   %s\n",
                c.name.c_str(), c.serialSec * 1e3, c.parSec * 1e3,
                c.serialSec / c.parSec, c.identical ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("OpenMP threads: %d\n", omp_get_max_threads());
#else
    std::printf("OpenMP not enabled; both drivers run serially.\n");
#endif

    Rng rng(0xbe9c);
    const int reps = 5;

    {
        Case c{.name = "matmul 512x256 * 256x512"};
        const Matrix a = random_matrix(512, 256, rng);
        const Matrix b = random_matrix(256, 512, rng);
        Matrix rs, rp;
        c.serialSec = time_best_of(reps, [&] { rs = serial::matmul(a, b); });
        c.parSec = time_best_of(reps, [&] { rp = par::matmul(a, b); });
        c.identical = rs == rp;
        report(c);
    }
    {
        Case c{.name = "matmul_abt 2048x128 pairs"};
        const Matrix a = random_matrix(2048, 128, rng);
        const Matrix b = random_matrix(2048, 128, rng);
        Matrix rs, rp;
        c.serialSec = time_best_of(reps, [&] { rs = serial::matmul_abt(a, b); });
        c.parSec = time_best_of(reps, [&] { rp = par::matmul_abt(a, b); });
        c.identical = rs == rp;
        report(c);
    }
    {
        Case c{.name = "softmax_rows 8192x512"};
        const Matrix a = random_matrix(8192, 512, rng);
        Matrix rs, rp;
        c.serialSec = time_best_of(reps, [&] { rs = serial::softmax_rows(a); });
        c.parSec = time_best_of(reps, [&] { rp = par::softmax_rows(a); });
        c.identical = rs == rp;
        report(c);
    }
    {
        Case c{.name = "l2_normalize_rows 8192x512"};
        const Matrix a = random_matrix(8192, 512, rng);
        Matrix rs, rp;
        c.serialSec = time_best_of(reps, [&] { rs = serial::l2_normalize_rows(a, 1e-12); });
        c.parSec = time_best_of(reps, [&] { rp = par::l2_normalize_rows(a, 1e-12); });
        c.identical = rs == rp;
        report(c);
    }
    {
        Case c{.name = "assign_nearest 20000x64 K=64"};
        const Matrix pts = random_matrix(20000, 64, rng);
        const Matrix centroids = random_matrix(64, 64, rng);
        std::vector<std::uint32_t> ls, lp;
        std::vector<double> ds, dp;
        c.serialSec =
            time_best_of(reps, [&] { serial::assign_nearest(pts, centroids, ls, ds); });
        c.parSec = time_best_of(reps, [&] { par::assign_nearest(pts, centroids, lp, dp); });
        c.identical = ls == lp && ds == dp;
        report(c);
    }
    return 0;
}
