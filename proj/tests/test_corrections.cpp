#include <catch2/catch_amalgamated.hpp>

#include "cumulants.hpp"
#include "mlmtest/corrections.hpp"
#include "mlmtest/simulation.hpp"
#include "support.hpp"

using namespace mlmtest;
using namespace testsupport;

namespace {

CorrectionIngredients ingredients_at(const Design& d, const VectorXd& psi0, const VectorXd& omega) {
    const auto b = full_bundle(d, omega, 2);
    const auto o = orthogonalize(d, b, true);
    return ingredients(d, b, o, psi0);
}

double naive_trace(const MatrixXd& a, const MatrixXd& b) {
    double s = 0.0;
    for (Eigen::Index r = 0; r < a.rows(); ++r)
        for (Eigen::Index c = 0; c < a.cols(); ++c) s += a(r, c) * b(c, r);
    return s;
}

// Instances allowed by the oracle: n + m + 1 <= 6.
std::vector<FamilyCase> oracle_families() {
    return {{"iid", 0}, {"unstructured-G", 1}, {"ar1-errors", 0}, {"unstructured-G+ar1-errors", 1}};
}

}  // namespace

TEST_CASE("trace formulas agree with the index-summation oracles") {
    RandomStream rng(101);
    int count = 0;
    for (const auto& fc : oracle_families()) {
        for (int p = 1; p <= 2; ++p) {
            for (bool nonzero : {false, true}) {
                const int dim = CovarianceFamily::from_id(fc.id, fc.q).dim();
                const int n = std::min(3, max_oracle_dim - dim);
                if (n < p) continue;
                auto inst = random_instance(fc, 4, n, p, nonzero, rng);
                const auto& d = inst.design;
                const auto g = ingredients_at(d, inst.psi, inst.omega);
                const auto cum = exact_cumulants(d, inst.psi, inst.xi, inst.omega);
                CAPTURE(fc.id, n, p, nonzero);
                CHECK(rel_diff(bartlett_C(g), lawley_oracle(cum)) <= 1e-8);
                CHECK(std::abs(bartlett_Cstar(g) - dicicco_stern_oracle(cum)) <= 1e-8 * std::max(1e-2, std::abs(dicicco_stern_oracle(cum))));
                ++count;
            }
        }
    }
    CHECK(count >= 12);
}

TEST_CASE("specialized and general paths coincide") {
    RandomStream rng(102);
    for (const auto& fc : family_cases()) {
        for (int p = 1; p <= 2; ++p) {
            auto inst = random_instance(fc, 4, 3, p, false, rng);
            const auto g = ingredients_at(inst.design, inst.psi, inst.omega);
            CAPTURE(fc.id, p);
            // psi0 = 0: the omega information block is D
            CHECK(max_abs(g.K_omegaomega - g.D) <= 1e-14 * max_abs(g.D));
            const double Cz = bartlett_C(g, CorrectionPath::null_at_zero);
            const double Cg = bartlett_C(g, CorrectionPath::general);
            const double Sz = bartlett_Cstar(g, CorrectionPath::null_at_zero);
            const double Sg = bartlett_Cstar(g, CorrectionPath::general);
            CHECK(std::abs(Cz - Cg) <= 1e-12 * std::max(1.0, std::abs(Cz)));
            CHECK(std::abs(Sz - Sg) <= 1e-12 * std::max(1.0, std::abs(Sz)));
            CHECK(g.delta_star.cwiseAbs().maxCoeff() <= 1e-14);
            CHECK(bartlett_C(g) == Cz);
            if (inst.design.family.is_linear()) {
                for (const auto& a : g.A_j) CHECK(max_abs(a) == 0.0);
                CHECK(std::abs(bartlett_C(g, CorrectionPath::linear) - Cz) <= 1e-12 * std::max(1.0, std::abs(Cz)));
                CHECK(std::abs(bartlett_Cstar(g, CorrectionPath::linear) - Sz) <= 1e-12 * std::max(1.0, std::abs(Sz)));
            } else {
                CHECK_THROWS(bartlett_C(g, CorrectionPath::linear));
            }
        }
    }
}

TEST_CASE("trace variants agree for a scalar interest parameter only") {
    RandomStream rng(103);
    auto one = random_instance({"unstructured-G", 1}, 4, 3, 1, false, rng);
    const auto g1 = ingredients_at(one.design, one.psi, one.omega);
    CHECK(std::abs(bartlett_C(g1, CorrectionPath::automatic, TraceVariant::printed) - bartlett_C(g1)) < 1e-13);
    auto two = random_instance({"unstructured-G", 1}, 4, 3, 2, false, rng);
    const auto g2 = ingredients_at(two.design, two.psi, two.omega);
    CHECK(std::abs(bartlett_C(g2, CorrectionPath::automatic, TraceVariant::printed) - bartlett_C(g2)) > 1e-6);
}

TEST_CASE("closed forms without random effects") {
    RandomStream rng(104);
    for (int p = 1; p <= 2; ++p) {
        auto inst = random_instance({"iid", 0}, 4, 3, p, false, rng);
        const double s2 = inst.omega(0);
        const auto g = ingredients_at(inst.design, inst.psi, inst.omega);
        const int T = inst.design.T(), n = 3;
        // D = (1/2) tr(dSigma^1 dSigma_1) = -tr(sigma^-4 I) / 2
        CHECK(g.D(0, 0) == Catch::Approx(-T / (2.0 * s2 * s2)).epsilon(1e-13));
        CHECK(bartlett_C(g) == Catch::Approx(p * (2.0 * n - p + 2.0) / (2.0 * T)).epsilon(1e-12));
        CHECK(bartlett_Cstar(g) == Catch::Approx(p * (p - 2.0) / (2.0 * T)).margin(1e-13));
    }
}

TEST_CASE("ingredients match naive dense traces") {
    RandomStream rng(105);
    for (const auto& fc : std::vector<FamilyCase>{{"unstructured-G", 1}, {"unstructured-G+ar1-errors", 1}}) {
        auto inst = random_instance(fc, 3, 3, 1, true, rng, fc.id == "unstructured-G" ? 2 : 3);
        const auto& d = inst.design;
        const int dim = d.family.dim();
        const auto b = full_bundle(d, inst.omega, 2);
        const auto g = ingredients(d, b, orthogonalize(d, b, true), inst.psi);

        std::vector<MatrixXd> S, S1(dim), S2(dim * dim);
        for (const auto& u : b.units) S.push_back(u.sigma);
        const MatrixXd Sig = stack_blocks(S);
        const MatrixXd Si = Sig.inverse();
        for (int j = 0; j < dim; ++j) {
            std::vector<MatrixXd> blk;
            for (const auto& u : b.units) blk.push_back(u.d1[j]);
            S1[j] = stack_blocks(blk);
            for (int k = 0; k < dim; ++k) {
                std::vector<MatrixXd> b2;
                for (const auto& u : b.units) b2.push_back(u.d2[j * dim + k]);
                S2[j * dim + k] = stack_blocks(b2);
            }
        }
        std::vector<MatrixXd> Sup(dim);  // dSigma^j
        for (int j = 0; j < dim; ++j) Sup[j] = -Si * S1[j] * Si;
        const MatrixXd X = stack_rows(d.X);
        const MatrixXd Xp = X.leftCols(1), Xt = X.rightCols(2);
        const MatrixXd A = Xt.transpose() * Si * Xt;
        const MatrixXd Xpp = Xp - Xt * A.ldlt().solve(Xt.transpose() * Si * Xp);
        const MatrixXd W = Xpp.transpose() * Si * Xpp;
        CHECK(rel_err(g.W, W) < 1e-10);
        for (int j = 0; j < dim; ++j) {
            const MatrixXd Aj = Xpp.transpose() * Sup[j] * Xpp;
            CHECK(rel_diff(g.tau(j), naive_trace(W.inverse(), Aj)) < 1e-10);
            for (int k = 0; k < dim; ++k) {
                CHECK(rel_diff(g.D(j, k), 0.5 * naive_trace(Sup[j], S1[k])) < 1e-10);
                const MatrixXd Ak = Xpp.transpose() * Sup[k] * Xpp;
                CHECK(rel_diff(g.P(j, k), naive_trace(Aj * W.inverse(), Ak * W.inverse())) < 1e-10);
                for (int l = 0; l < dim; ++l) {
                    const double a = 0.5 * naive_trace(Sup[l], S2[j * dim + k]) - 0.5 * naive_trace(Sup[k], S2[j * dim + l]) -
                                     0.5 * naive_trace(Sup[j], S2[l * dim + k]);
                    CHECK(std::abs(g.A_j[j](k, l) - a) <= 1e-10 * std::max(1.0, max_abs(g.A_j[j])));
                }
            }
        }
    }
}

TEST_CASE("constants are invariant to nuisance permutations, component order and scale") {
    RandomStream rng(106);
    for (int p = 1; p <= 2; ++p) {
        auto inst = random_instance({"unstructured-G+ar1-errors", 2}, 4, 4, p, true, rng);
        const Design& d = inst.design;
        const auto ref = bartlett_constants(d, inst.psi, inst.omega);

        // reverse the nuisance columns
        Design dp = d;
        for (auto& X : dp.X) X.rightCols(d.nuisance()) = X.rightCols(d.nuisance()).rowwise().reverse().eval();
        const auto perm = bartlett_constants(dp, inst.psi, inst.omega);
        CHECK(std::abs(perm.C - ref.C) < 1e-10 * std::max(1.0, std::abs(ref.C)));
        CHECK(std::abs(perm.C_star - ref.C_star) < 1e-10 * std::max(1.0, std::abs(ref.C_star)));

        // swap the two random effects, which reorders (G11, G12, G22)
        Design dz = d;
        for (auto& Z : dz.Z) Z = Z.rowwise().reverse().eval();
        VectorXd om = inst.omega;
        std::swap(om(0), om(2));
        const auto swapped = bartlett_constants(dz, inst.psi, om);
        CHECK(std::abs(swapped.C - ref.C) < 1e-10 * std::max(1.0, std::abs(ref.C)));
        CHECK(std::abs(swapped.C_star - ref.C_star) < 1e-10 * std::max(1.0, std::abs(ref.C_star)));

        // Y -> cY, X -> cX, variance components -> c^2
        const double c = 3.7;
        Design ds = d;
        for (auto& y : ds.y) y *= c;
        for (auto& X : ds.X) X *= c;
        VectorXd oms = inst.omega;
        for (int k = 0; k < 3; ++k) oms(k) *= c * c;
        oms(d.family.variance_index()) *= c * c;
        const auto scaled = bartlett_constants(ds, inst.psi, oms);
        CHECK(std::abs(scaled.C - ref.C) < 1e-8 * std::max(1.0, std::abs(ref.C)));
        CHECK(std::abs(scaled.C_star - ref.C_star) < 1e-8 * std::max(1.0, std::abs(ref.C_star)));
    }
}

TEST_CASE("the correction decays like 1/N on the size-study design") {
    SimConfig cfg;
    const VectorXd omega = (VectorXd(4) << 1.0, 0.0, 0.5, 0.05).finished();
    std::vector<double> C, Cs;
    for (int N : {12, 24, 48, 96}) {
        // average over a few covariate draws to smooth the design
        double c = 0.0, cs = 0.0;
        for (int s = 0; s < 8; ++s) {
            RandomStream rng(700 + s);
            const Design d = simulate_dataset(cfg, {N, 0.0, 0.5}, rng);
            const auto k = bartlett_constants(d, VectorXd::Zero(2), omega);
            c += k.C / 8;
            cs += k.C_star / 8;
        }
        C.push_back(c);
        Cs.push_back(cs);
    }
    for (size_t k = 1; k < C.size(); ++k) {
        CAPTURE(k, C[k - 1], C[k]);
        CHECK(C[k] / C[k - 1] >= 0.4);
        CHECK(C[k] / C[k - 1] <= 0.6);
    }
}

TEST_CASE("denominator guard and evaluation point bookkeeping") {
    RandomStream rng(107);
    auto inst = random_instance({"unstructured-G", 1}, 4, 3, 2, true, rng);
    const auto k = bartlett_constants(inst.design, inst.psi, inst.omega);
    CHECK(k.omega == inst.omega);
    CHECK(k.psi0 == inst.psi);
    CHECK(k.p == 2);
    CHECK(k.C_usable == (1.0 + k.C / 2.0 > 0.0));
    CHECK(k.C_star_usable == (1.0 + k.C_star / 2.0 > 0.0));
}
