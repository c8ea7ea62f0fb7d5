#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include <boost/math/special_functions/gamma.hpp>

#include "mlmtest/errors.hpp"
#include "mlmtest/numutil.hpp"

using namespace mlmtest;
using Catch::Approx;

TEST_CASE("chol_solve identity and diagonal cases") {
    MatrixXd M(3, 2);
    M << 1, 2, 3, 4, 5, 6;
    CHECK((chol_solve(SymMatrix(MatrixXd::Identity(3, 3)), M) - M).cwiseAbs().maxCoeff() == 0.0);

    MatrixXd A = VectorXd((VectorXd(2) << 2, 4).finished()).asDiagonal();
    const MatrixXd x = chol_solve(SymMatrix(A), (VectorXd(2) << 2, 4).finished());
    CHECK(x(0) == Approx(1.0).margin(1e-15));
    CHECK(x(1) == Approx(1.0).margin(1e-15));
}

TEST_CASE("chol_solve residual on random SPD systems") {
    RandomStream rng(11);
    for (int rep = 0; rep < 10; ++rep) {
        MatrixXd R(6, 6), B(6, 2);
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j < 6; ++j) R(i, j) = rng.normal();
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j < 2; ++j) B(i, j) = rng.normal();
        const MatrixXd A = R * R.transpose() + 0.1 * MatrixXd::Identity(6, 6);
        const MatrixXd X = chol_solve(SymMatrix(A), B);
        CHECK((A * X - B).norm() / B.norm() < 1e-10);
    }
}

TEST_CASE("chol_solve reports indefinite matrices instead of regularizing") {
    MatrixXd A(2, 2);
    A << 1, 2, 2, 1;
    try {
        chol_solve(SymMatrix(A), MatrixXd::Identity(2, 2));
        FAIL("expected an exception");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::not_positive_definite);
    }
    MatrixXd asym(2, 2);
    asym << 1, 0.5, 0, 1;
    CHECK_THROWS_AS(SymMatrix(asym), std::invalid_argument);
}

TEST_CASE("chi-square p-values with three degrees of freedom") {
    const std::pair<double, double> pairs[] = {{6.522, 0.089}, {5.678, 0.128}, {5.287, 0.152}, {6.168, 0.104},
                                               {6.143, 0.105}, {5.174, 0.159}, {4.002, 0.261}, {4.167, 0.244}};
    for (const auto& [x, p] : pairs) {
        CAPTURE(x);
        CHECK(std::round(chisq_sf(x, 3) * 1000.0) / 1000.0 == Approx(p).margin(1e-12));
    }
    for (int df = 1; df <= 6; ++df) CHECK(chisq_sf(0.0, df) == 1.0);
}

TEST_CASE("chi-square tail agrees with an independent incomplete gamma") {
    for (int df = 1; df <= 12; ++df) {
        for (double x : {1e-6, 0.01, 0.3, 1.0, 2.5, 5.99, 10.0, 25.0, 60.0, 150.0}) {
            CAPTURE(df, x);
            const double ref_q = boost::math::gamma_q(0.5 * df, 0.5 * x);
            const double ref_p = boost::math::gamma_p(0.5 * df, 0.5 * x);
            if (ref_q > 1e-290) CHECK(std::abs(chisq_sf(x, df) - ref_q) <= 1e-12 * ref_q + 1e-300);
            CHECK(std::abs(chisq_cdf(x, df) - ref_p) <= 1e-12 * std::max(ref_p, 1e-290));
            const auto pq = incomplete_gamma(0.5 * df, 0.5 * x);
            CHECK(std::abs(pq.p + pq.q - 1.0) < 1e-14);
        }
    }
}

TEST_CASE("chi-square quantile inverts the distribution function") {
    for (int df : {1, 2, 3, 7}) {
        for (double p : {0.01, 0.05, 0.5, 0.9, 0.95, 0.999}) {
            const double q = chisq_quantile(p, df);
            CHECK(chisq_cdf(q, df) == Approx(p).epsilon(1e-10));
        }
    }
    CHECK(chisq_quantile(0.95, 2) == Approx(-2.0 * std::log(0.05)).epsilon(1e-12));
    CHECK_THROWS(chisq_quantile(1.0, 2));
    CHECK_THROWS(chisq_sf(1.0, 0));
}

TEST_CASE("multivariate normal sampling") {
    const VectorXd mean = (VectorXd(2) << 1.5, -2.0).finished();
    CHECK(sample_mvn(mean, MatrixXd::Zero(2, 2), 3) == mean);
    CHECK(sample_mvn(mean, MatrixXd::Identity(2, 2), 42) == sample_mvn(mean, MatrixXd::Identity(2, 2), 42));

    MatrixXd G(2, 2);
    G << 1.0, 0.25, 0.25, 1.0;
    const MatrixXd L = G.llt().matrixL();
    RandomStream rng(2024);
    const int draws = 100000;
    MatrixXd S = MatrixXd::Zero(2, 2);
    VectorXd m = VectorXd::Zero(2);
    for (int i = 0; i < draws; ++i) {
        const VectorXd v = sample_mvn(VectorXd::Zero(2), L, rng);
        S += v * v.transpose();
        m += v;
    }
    m /= draws;
    S = S / draws - m * m.transpose();
    CHECK((S - G).cwiseAbs().maxCoeff() < 0.02);
}

TEST_CASE("random streams are indexed and reproducible") {
    RandomStream a(5, 0), b(5, 0), c(5, 1), d(6, 0);
    bool all_equal = true, differ_index = false, differ_seed = false;
    for (int i = 0; i < 100; ++i) {
        const double x = a.uniform(), y = b.uniform(), z = c.uniform(), w = d.uniform();
        all_equal = all_equal && x == y;
        differ_index = differ_index || x != z;
        differ_seed = differ_seed || x != w;
        CHECK(x > 0.0);
        CHECK(x < 1.0);
    }
    CHECK(all_equal);
    CHECK(differ_index);
    CHECK(differ_seed);
}
