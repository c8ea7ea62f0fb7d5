#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlmtest/covariance.hpp"
#include "mlmtest/design.hpp"
#include "mlmtest/errors.hpp"
#include "mlmtest/likelihood.hpp"
#include "mlmtest/numutil.hpp"

namespace testsupport {

using namespace mlmtest;

struct Instance {
    Design design;
    VectorXd psi;
    VectorXd xi;
    VectorXd omega;
};

// Family ids paired with their q.
struct FamilyCase {
    std::string id;
    int q;
};

inline const std::vector<FamilyCase>& family_cases() {
    static const std::vector<FamilyCase> cases{
        {"iid", 0}, {"unstructured-G", 1}, {"unstructured-G", 2}, {"ar1-errors", 0}, {"unstructured-G+ar1-errors", 1}};
    return cases;
}

inline VectorXd random_omega(const CovarianceFamily& fam, RandomStream& rng) {
    VectorXd om(fam.dim());
    for (int a = 0; a < fam.q; ++a)
        for (int b = a; b < fam.q; ++b) om(fam.g_index(a, b)) = a == b ? 0.5 + rng.uniform() : 0.2 * rng.normal();
    if (fam.errors == ErrorStructure::ar1) om(fam.rho_index()) = 0.8 * rng.uniform() - 0.4;
    om(fam.variance_index()) = 0.5 + rng.uniform();
    return om;
}

// Small random instance: N units with tau_i in {2, 3}, Gaussian covariates,
// Z = [1, uniform...], responses drawn from the model at (psi, xi, omega).
inline Instance random_instance(const FamilyCase& fc, int N, int n, int p, bool psi_nonzero, RandomStream& rng,
                                int tau_max = 3) {
    const auto fam = CovarianceFamily::from_id(fc.id, fc.q);
    std::vector<VectorXd> ys;
    std::vector<MatrixXd> Xs, Zs;
    for (int i = 0; i < N; ++i) {
        const int tau = 2 + (tau_max > 2 ? i % (tau_max - 1) : 0);
        MatrixXd X(tau, n), Z(tau, fc.q);
        for (int a = 0; a < tau; ++a) {
            for (int b = 0; b < n; ++b) X(a, b) = rng.normal();
            for (int b = 0; b < fc.q; ++b) Z(a, b) = b == 0 ? 1.0 : rng.uniform();
        }
        VectorXd y(tau);
        for (int a = 0; a < tau; ++a) y(a) = rng.normal();
        ys.push_back(y);
        Xs.push_back(X);
        Zs.push_back(Z);
    }
    Instance inst{make_design(ys, Xs, Zs, p, fam), VectorXd::Zero(p), VectorXd(n - p), random_omega(fam, rng)};
    if (psi_nonzero)
        for (int a = 0; a < p; ++a) inst.psi(a) = rng.normal();
    for (int a = 0; a < n - p; ++a) inst.xi(a) = rng.normal();
    return inst;
}

inline double max_abs(const MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

// Max-norm relative error of a against reference b.
inline double rel_err(const MatrixXd& a, const MatrixXd& b) {
    const double scale = std::max(max_abs(b), 1e-300);
    return max_abs(a - b) / scale;
}

// Central-difference agreement: relative to the difference quotient, with a
// floor at the rounding noise of differencing a quantity of size f_scale.
inline bool fd_close(const MatrixXd& analytic, const MatrixXd& fd, double f_scale, double tol = 1e-5) {
    return max_abs(analytic - fd) <= tol * std::max(max_abs(fd), 1e-5 * f_scale);
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace testsupport
