#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <kdclip/losses.hpp>
#include <kdclip/models.hpp>
#include <kdclip/numerics.hpp>
#include <kdclip/rng.hpp>

#include <array>
#include <cmath>
#include <vector>

using namespace kdclip;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    Matrix m(r, c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) m(i, j) = scale * rng.gaussian();
    return m;
}

LinearProjector identity_projector(std::size_t d) {
    Rng rng(1);
    LinearProjector p(d, d, rng, "we");
    p.weight.value = Matrix::identity(d);
    return p;
}

}  // namespace

TEST_CASE("distillation loss is zero at a perfect match") {
    Rng rng(2);
    Matrix student = random_matrix(3, 4, rng);
    LinearProjector we = identity_projector(4);
    double v = loss_emb(student, we, student, Reduction::Sum, 1.0, nullptr);
    CHECK(v == 0.0);
}

TEST_CASE("distillation loss hand case: residual 2 gives 4") {
    Matrix student = Matrix::from_rows({{2}});
    LinearProjector we = identity_projector(1);
    Matrix teacher = Matrix::from_rows({{0}});
    double v = loss_emb(student, we, teacher, Reduction::Sum, 1.0, nullptr);
    CHECK(v == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("distillation loss hand case: residual rows (1,0) and (0,-2) give 5") {
    Matrix student = Matrix::from_rows({{1, 0}, {0, -2}});
    LinearProjector we = identity_projector(2);
    Matrix teacher(2, 2, 0.0);
    double sum = loss_emb(student, we, teacher, Reduction::Sum, 1.0, nullptr);
    CHECK(sum == doctest::Approx(5.0).epsilon(1e-12));
    double mean = loss_emb(student, we, teacher, Reduction::Mean, 1.0, nullptr);
    CHECK(mean == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("distillation loss rejects row mismatch") {
    Matrix student(3, 2);
    LinearProjector we = identity_projector(2);
    Matrix teacher(4, 2);
    CHECK_THROWS(loss_emb(student, we, teacher, Reduction::Sum, 1.0, nullptr));
}

TEST_CASE("concept loss on perfect predictions is zero") {
    Matrix probs = Matrix::identity(3);
    Matrix onehot = Matrix::identity(3);
    CHECK(loss_conc(probs, onehot, kProbClamp, Reduction::Sum, 1.0, nullptr) == 0.0);
}

TEST_CASE("concept loss on uniform four-way predictions is ln 4") {
    Matrix probs(1, 4, 0.25);
    Matrix onehot(1, 4, 0.0);
    onehot(0, 2) = 1.0;
    double v = loss_conc(probs, onehot, kProbClamp, Reduction::Sum, 1.0, nullptr);
    CHECK(v == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("concept loss clamps a zero true-class probability") {
    Matrix probs = Matrix::from_rows({{0.0, 1.0}});
    Matrix onehot = Matrix::from_rows({{1.0, 0.0}});
    double v = loss_conc(probs, onehot, kProbClamp, Reduction::Sum, 1.0, nullptr);
    CHECK(v == doctest::Approx(-std::log(1e-12)).epsilon(1e-9));
    CHECK(std::isfinite(v));
}

TEST_CASE("contrastive loss with one pair is exactly zero") {
    Matrix t = Matrix::from_rows({{0.3, 0.4}});
    Matrix i = Matrix::from_rows({{-1.0, 2.0}});
    ParamTensor temp = make_temperature(0.7);
    CHECK(loss_contrastive(t, i, temp, 1.0, nullptr, nullptr) == 0.0);
}

TEST_CASE("contrastive loss identity hand case") {
    Matrix e = Matrix::identity(2);
    ParamTensor temp = make_temperature(0.0);
    double v = loss_contrastive(e, e, temp, 1.0, nullptr, nullptr);
    // logits [[1,0],[0,1]]: every row/column CE is ln(1+exp(-1)).
    CHECK(v == doctest::Approx(0.31326).epsilon(1e-5));
}

TEST_CASE("contrastive loss on collapsed images hand case") {
    // Both images normalize to [1,0]; texts stay distinct. The text-to-image
    // direction cannot tell the images apart (ln 2 per item) while the
    // image-to-text rows score [1,0] against targets 0 and 1.
    Matrix t = Matrix::identity(2);
    Matrix i = Matrix::from_rows({{1, 0}, {2, 0}});
    ParamTensor temp = make_temperature(0.0);
    double v = loss_contrastive(t, i, temp, 1.0, nullptr, nullptr);
    const double e = std::exp(1.0);
    const double expected =
        (std::log(1.0 + 1.0 / e) + std::log(1.0 + e) + 2.0 * std::log(2.0)) / 4.0;
    CHECK(v == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("contrastive loss is invariant to positive row rescaling") {
    Rng rng(5);
    Matrix t = random_matrix(5, 6, rng);
    Matrix i = random_matrix(5, 6, rng);
    ParamTensor temp = make_temperature();
    double base = loss_contrastive(t, i, temp, 1.0, nullptr, nullptr);

    Matrix t2 = t, i2 = i;
    for (std::size_t r = 0; r < t2.rows(); ++r) {
        double st = 0.1 + 5.0 * rng.uniform01();
        double si = 0.1 + 5.0 * rng.uniform01();
        for (std::size_t c = 0; c < t2.cols(); ++c) {
            t2(r, c) *= st;
            i2(r, c) *= si;
        }
    }
    double scaled = loss_contrastive(t2, i2, temp, 1.0, nullptr, nullptr);
    CHECK(scaled == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("contrastive loss is symmetric in its two inputs") {
    Rng rng(6);
    Matrix t = random_matrix(4, 5, rng);
    Matrix i = random_matrix(4, 5, rng);
    ParamTensor temp = make_temperature();
    double a = loss_contrastive(t, i, temp, 1.0, nullptr, nullptr);
    double b = loss_contrastive(i, t, temp, 1.0, nullptr, nullptr);
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("all loss values are non-negative on random inputs") {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        std::size_t n = 1 + rng.index(5);
        Matrix student = random_matrix(n, 3, rng);
        LinearProjector we = identity_projector(3);
        Matrix teacher = random_matrix(n, 3, rng);
        CHECK(loss_emb(student, we, teacher, Reduction::Sum, 1.0, nullptr) >= 0.0);

        Matrix logits = random_matrix(n, 4, rng, 2.0);
        Matrix probs = softmax_rows(logits);
        Matrix onehot(n, 4, 0.0);
        for (std::size_t r = 0; r < n; ++r) onehot(r, rng.index(4)) = 1.0;
        CHECK(loss_conc(probs, onehot, kProbClamp, Reduction::Sum, 1.0, nullptr) >= 0.0);

        Matrix ie = random_matrix(n, 3, rng);
        ParamTensor temp = make_temperature();
        CHECK(loss_contrastive(student, ie, temp, 1.0, nullptr, nullptr) >= 0.0);
    }
}

TEST_CASE("total loss is the weighted component sum") {
    LossBreakdown b = loss_total(5.0, 1.3863, 0.69315, 1.0, 0.01, 1.0);
    const double expected = 1.0 * 5.0 + 0.01 * 1.3863 + 1.0 * 0.69315;
    CHECK(b.total == doctest::Approx(expected).epsilon(1e-12));
    CHECK(b.total == doctest::Approx(5.70701).epsilon(1e-5));
    CHECK(loss_total(3, 4, 5, 0, 0, 0).total == 0.0);
    CHECK(loss_total(3, 4, 5, 0, 2, 0).total == doctest::Approx(8.0).epsilon(1e-15));
    CHECK_THROWS(loss_total(1, 1, 1, -0.5, 0, 0));
}

TEST_CASE("distillation loss under a shared rotation of teacher and projector") {
    // Rotating the teacher targets while right-multiplying the projector by
    // the same rotation leaves the residuals unchanged.
    Rng rng(8);
    Matrix student = random_matrix(4, 2, rng);
    LinearProjector we(2, 2, rng, "we");
    Matrix teacher = random_matrix(4, 2, rng);
    double base = loss_emb(student, we, teacher, Reduction::Sum, 1.0, nullptr);

    double theta = 0.8375;
    Matrix rot = Matrix::from_rows({{std::cos(theta), std::sin(theta)},
                                    {-std::sin(theta), std::cos(theta)}});
    LinearProjector weR(2, 2, rng, "weR");
    weR.weight.value = matmul(we.weight.value, rot);
    Matrix teacherR = matmul(teacher, rot);
    double rotated = loss_emb(student, weR, teacherR, Reduction::Sum, 1.0, nullptr);
    CHECK(rotated == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("backward weight scales gradients and accumulates") {
    Rng rng(9);
    Matrix student = random_matrix(3, 2, rng);
    LinearProjector we(2, 4, rng, "we");
    Matrix teacher = random_matrix(3, 4, rng);

    Matrix acc1(3, 2, 0.0);
    loss_emb(student, we, teacher, Reduction::Sum, 1.0, &acc1);
    Matrix gradOnce = we.weight.grad;

    we.weight.zero_grad();
    Matrix acc2(3, 2, 0.0);
    loss_emb(student, we, teacher, Reduction::Sum, 2.5, &acc2);
    for (std::size_t i = 0; i < acc1.rows(); ++i)
        for (std::size_t j = 0; j < acc1.cols(); ++j)
            CHECK(acc2(i, j) == doctest::Approx(2.5 * acc1(i, j)).epsilon(1e-12));
    for (std::size_t i = 0; i < gradOnce.rows(); ++i)
        for (std::size_t j = 0; j < gradOnce.cols(); ++j)
            CHECK(we.weight.grad(i, j) ==
                  doctest::Approx(2.5 * gradOnce(i, j)).epsilon(1e-12));

    // A second backward call adds on top instead of overwriting.
    loss_emb(student, we, teacher, Reduction::Sum, 2.5, &acc2);
    for (std::size_t i = 0; i < gradOnce.rows(); ++i)
        for (std::size_t j = 0; j < gradOnce.cols(); ++j)
            CHECK(we.weight.grad(i, j) ==
                  doctest::Approx(5.0 * gradOnce(i, j)).epsilon(1e-12));
}

TEST_CASE("frozen temperature receives no gradient") {
    Rng rng(10);
    Matrix t = random_matrix(3, 4, rng);
    Matrix i = random_matrix(3, 4, rng);
    ParamTensor temp = make_temperature();
    temp.frozen = true;
    Matrix dt(3, 4, 0.0), di(3, 4, 0.0);
    loss_contrastive(t, i, temp, 1.0, &dt, &di);
    CHECK(temp.grad(0, 0) == 0.0);
}

TEST_CASE("distillation gradients match finite differences") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        std::size_t n = 1 + rng.index(6);
        std::size_t d = 1 + rng.index(8);
        std::size_t dp = 1 + rng.index(8);
        Matrix studentBase = random_matrix(n, d, rng);
        LinearProjector we(d, dp, rng, "we");
        Matrix teacher = random_matrix(n, dp, rng);
        ParamTensor student(studentBase, "student");

        std::array<ParamTensor*, 2> params = {&student, &we.weight};
        Reduction red = (seed % 2 == 0) ? Reduction::Sum : Reduction::Mean;
        auto lossFn = [&]() {
            Matrix dStudent(n, d, 0.0);
            double v = loss_emb(student.value, we, teacher, red, 1.0, &dStudent);
            add_scaled(student.grad, dStudent, 1.0);
            return v;
        };
        auto report = check_gradients(lossFn, params, 1e-6, 1e-4);
        INFO("seed ", seed, " worst ", report.worst.param, " rel ",
             report.maxRelError);
        CHECK(report.pass);
    }
}

TEST_CASE("concept gradients match finite differences through a softmax") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed * 31);
        std::size_t n = 1 + rng.index(6);
        std::size_t k = 2 + rng.index(6);
        ParamTensor logits(random_matrix(n, k, rng), "logits");
        Matrix onehot(n, k, 0.0);
        for (std::size_t r = 0; r < n; ++r) onehot(r, rng.index(k)) = 1.0;

        std::array<ParamTensor*, 1> params = {&logits};
        auto lossFn = [&]() {
            Matrix probs = softmax_rows(logits.value);
            Matrix dProbs(n, k, 0.0);
            double v = loss_conc(probs, onehot, kProbClamp, Reduction::Sum, 1.0,
                                 &dProbs);
            Matrix dLogits = softmax_backward_rows(probs, dProbs);
            add_scaled(logits.grad, dLogits, 1.0);
            return v;
        };
        auto report = check_gradients(lossFn, params, 1e-6, 1e-4);
        INFO("seed ", seed, " rel ", report.maxRelError);
        CHECK(report.pass);
    }
}

TEST_CASE("contrastive gradients match finite differences") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed * 101);
        std::size_t n = 2 + rng.index(5);
        std::size_t d = 2 + rng.index(7);
        ParamTensor text(random_matrix(n, d, rng), "text");
        ParamTensor image(random_matrix(n, d, rng), "image");
        ParamTensor temp = make_temperature(0.3);

        std::array<ParamTensor*, 3> params = {&text, &image, &temp};
        auto lossFn = [&]() {
            Matrix dt(n, d, 0.0), di(n, d, 0.0);
            double v = loss_contrastive(text.value, image.value, temp, 1.0, &dt, &di);
            add_scaled(text.grad, dt, 1.0);
            add_scaled(image.grad, di, 1.0);
            return v;
        };
        auto report = check_gradients(lossFn, params, 1e-6, 1e-4);
        INFO("seed ", seed, " worst ", report.worst.param, " rel ",
             report.maxRelError);
        CHECK(report.pass);
    }
}

TEST_CASE("weighted total gradients match finite differences") {
    // All three losses wired the way the training loop combines them.
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed * 7 + 1);
        std::size_t n = 2 + rng.index(4);
        std::size_t d = 2 + rng.index(4);
        std::size_t dp = 2 + rng.index(4);
        std::size_t k = 2 + rng.index(3);

        ParamTensor text(random_matrix(n, d, rng), "text");
        ParamTensor image(random_matrix(n, d, rng), "image");
        LinearProjector we(d, dp, rng, "we");
        LinearProjector wi(d, dp, rng, "wi");
        Rng crng(seed);
        Classifier cls(dp, k, crng);
        cls.freeze();
        Matrix teacher = random_matrix(n, dp, rng);
        Matrix onehot(n, k, 0.0);
        for (std::size_t r = 0; r < n; ++r) onehot(r, rng.index(k)) = 1.0;
        ParamTensor temp = make_temperature(0.1);

        const double alpha = 1.0, beta = 0.01, gamma = 1.0;
        std::vector<ParamTensor*> params = {&text, &image, &we.weight, &wi.weight,
                                            &temp};
        auto lossFn = [&]() {
            Matrix dText(n, d, 0.0), dImage(n, d, 0.0);
            double emb = loss_emb(text.value, we, teacher, Reduction::Sum, alpha,
                                  &dText);

            Matrix projected = wi.project(image.value);
            Matrix probs = cls.classify(projected);
            Matrix dProbs(n, k, 0.0);
            double conc = loss_conc(probs, onehot, kProbClamp, Reduction::Sum,
                                    beta, &dProbs);
            Matrix dLogits = softmax_backward_rows(probs, dProbs);
            Matrix dProjected = cls.backward_from_logits(projected, dLogits);
            add_scaled(dImage, wi.backward(image.value, dProjected), 1.0);

            double cont =
                loss_contrastive(text.value, image.value, temp, gamma, &dText,
                                 &dImage);
            add_scaled(text.grad, dText, 1.0);
            add_scaled(image.grad, dImage, 1.0);
            return loss_total(emb, conc, cont, alpha, beta, gamma).total;
        };
        auto report = check_gradients(lossFn, params, 1e-6, 1e-4);
        INFO("seed ", seed, " worst ", report.worst.param, " rel ",
             report.maxRelError);
        CHECK(report.pass);
    }
}
