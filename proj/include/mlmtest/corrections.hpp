#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlmtest/covariance.hpp"
#include "mlmtest/design.hpp"
#include "mlmtest/likelihood.hpp"

namespace mlmtest {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Trace-formula building blocks at (psi0, omega). Indices j, k, l run over
// omega; f over the orthogonal nuisance coefficients xi.
struct CorrectionIngredients {
    int p = 0, nu = 0, dim = 0;
    bool linear = true;
    VectorXd psi0;
    VectorXd omega;

    MatrixXd D;      // (1/2) tr(dSigma^j dSigma_k); equals K_ww when psi0 = 0
    MatrixXd W;      // Xp'^T Sigma^-1 Xp'
    MatrixXd M, P;
    VectorXd tau, gamma, nu_vec, gamma_star;
    std::vector<MatrixXd> A_j, C_j;   // A^(j), C^(j)

    // expected information blocks and blocks of its inverse
    MatrixXd K_psipsi, K_xixi, K_xiomega, K_omegaomega;
    MatrixXd Kinv_psipsi, Kinv_xixi, Kinv_xiomega, Kinv_omegaomega;

    // general-psi0 pieces
    VectorXd rho, delta, eta;            // tr(K^ww A^(j)), tr(K^xw' B^(j)), -tr(K^xx Xt' dSigma^j Xt)
    VectorXd rho_star, delta_star, eta_star;  // tr(K^ww C^(j)), tr(K^xw' F^(j)), tr(K^wx G^(f))
    std::vector<MatrixXd> B_j, F_j, G_f;
    VectorXd lr_mean_omega, lr_xi;       // mean-derivative terms of the LR constant
    VectorXd cr_mean_omega, cr_xi;       // and of the Cox-Reid constant
};

enum class CorrectionPath { automatic, null_at_zero, linear, general };
// exact: P/2 - tau tau'/4 interest term; printed: P/4 (agrees with exact for p = 1)
enum class TraceVariant { exact, printed };

const char* path_name(CorrectionPath path);
const char* variant_name(TraceVariant v);
CorrectionPath parse_path(const std::string& s);
TraceVariant parse_variant(const std::string& s);

CorrectionIngredients ingredients(const Design& design, const SigmaBundle& bundle, const OrthogonalizedDesign& orth,
                                  const VectorXd& psi0);

double bartlett_C(const CorrectionIngredients& ing, CorrectionPath path = CorrectionPath::automatic,
                  TraceVariant variant = TraceVariant::exact);
double bartlett_Cstar(const CorrectionIngredients& ing, CorrectionPath path = CorrectionPath::automatic,
                      TraceVariant variant = TraceVariant::exact);

struct BartlettConstants {
    double C = 0.0;
    double C_star = 0.0;
    int p = 0;
    VectorXd omega;
    VectorXd psi0;
    CorrectionPath path = CorrectionPath::automatic;
    TraceVariant variant = TraceVariant::exact;
    bool C_usable = false;       // 1 + C/p > 0
    bool C_star_usable = false;  // 1 + C*/p > 0
};

BartlettConstants bartlett_constants(const Design& design, const VectorXd& psi0, const VectorXd& omega,
                                     CorrectionPath path = CorrectionPath::automatic,
                                     TraceVariant variant = TraceVariant::exact);
BartlettConstants bartlett_constants(const Design& design, const SigmaBundle& bundle,
                                     const OrthogonalizedDesign& orth, const VectorXd& psi0,
                                     CorrectionPath path = CorrectionPath::automatic,
                                     TraceVariant variant = TraceVariant::exact);

}  // namespace mlmtest
