#pragma once

#include <vector>

#include <Eigen/Dense>

#include "mlmtest/design.hpp"

namespace mlmtest {

using Eigen::VectorXd;

// Joint cumulants of log-likelihood derivatives and their parameter
// derivatives, for the full parameter vector theta = (psi, xi, omega).
//   k2(r,s) = kappa_rs, k3(r,s,t) = kappa_rst, k4(r,s,t,u) = kappa_rstu,
//   k2_t(r,s,t) = (kappa_rs)_t, k2_tu(r,s,t,u) = (kappa_rs)_tu,
//   k3_u(r,s,t,u) = (kappa_rst)_u.
struct CumulantTensors {
    int d = 0;  // n + m + 1
    int p = 0;  // leading interest block
    std::vector<double> k2, k3, k4, k2_t, k2_tu, k3_u;

    double& K2(int r, int s) { return k2[r * d + s]; }
    double K2(int r, int s) const { return k2[r * d + s]; }
    double K3(int r, int s, int t) const { return k3[(r * d + s) * d + t]; }
    double K4(int r, int s, int t, int u) const { return k4[((r * d + s) * d + t) * d + u]; }
    double K2t(int r, int s, int t) const { return k2_t[(r * d + s) * d + t]; }
    double K2tu(int r, int s, int t, int u) const { return k2_tu[((r * d + s) * d + t) * d + u]; }
    double K3u(int r, int s, int t, int u) const { return k3_u[((r * d + s) * d + t) * d + u]; }
};

constexpr int max_oracle_dim = 6;

// Exact cumulants from the expected log-likelihood E_theta l(theta'), with
// every mixed partial obtained by hyperdual arithmetic (no truncation error).
CumulantTensors exact_cumulants(const Design& design, const VectorXd& psi, const VectorXd& xi,
                                const VectorXd& omega);

// Index-summation reference values of the Bartlett constants.
double lawley_oracle(const CumulantTensors& cum);
double dicicco_stern_oracle(const CumulantTensors& cum);

}  // namespace mlmtest
