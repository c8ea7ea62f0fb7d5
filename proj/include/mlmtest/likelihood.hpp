#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlmtest/covariance.hpp"
#include "mlmtest/design.hpp"
#include "mlmtest/optimize.hpp"

namespace mlmtest {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct FitOptions {
    OptimOptions optim;
    bool newton = false;          // damped Newton in omega first (for warm starts), quasi-Newton as fallback
    bool newton_only = false;     // report a Newton failure instead of falling back
    bool polish = true;           // Newton refinement in omega after BFGS
    bool multistart = true;       // also start from a few dispersed points and keep the best maximum
    double boundary_tol = 1e-8;   // det(G) below this flags the fit
};

struct FitResult {
    VectorXd beta_hat;    // design order (psi first)
    VectorXd omega_hat;
    double loglik = 0.0;
    bool converged = false;
    int iterations = 0;
    double gradient_norm = 0.0;  // max-norm in the optimizer's unconstrained coordinates
    bool boundary = false;
    std::string message;

    // restricted / adjusted fits
    VectorXd psi;         // psi0 for restricted fits, psi-tilde for adjusted fits
    VectorXd xi_hat;      // orthogonal nuisance estimate at (psi, omega_hat)
    double adjusted_loglik = 0.0;
};

// log-likelihood with beta profiled out by GLS, for fixed psi (restricted) or
// free beta (full). Value, gradient and Hessian in omega.
class GlsProfile {
public:
    GlsProfile(const Design& design, std::optional<VectorXd> psi0 = std::nullopt);

    struct Eval {
        double loglik = 0.0;
        VectorXd coef;  // GLS coefficients (beta, or varsigma under restriction)
        VectorXd grad;
        MatrixXd hess;
    };
    Eval evaluate(const VectorXd& omega, int order) const;

    const Design& design() const { return design_; }
    bool restricted() const { return psi0_.has_value(); }

private:
    const Design& design_;
    std::optional<VectorXd> psi0_;
    std::vector<VectorXd> y_;
    std::vector<MatrixXd> X_;
};

double loglik(const Design& design, const VectorXd& beta, const VectorXd& omega);

VectorXd default_start(const Design& design);

FitResult fit_ml(const Design& design, const std::optional<VectorXd>& init = std::nullopt,
                 const FitOptions& opts = {});
FitResult fit_restricted(const Design& design, const VectorXd& psi0,
                         const std::optional<VectorXd>& init = std::nullopt, const FitOptions& opts = {});

struct OrthogonalizedDesign {
    int n = 0, p = 0, dim = 0;
    MatrixXd A;      // Xt' Sigma^-1 Xt
    MatrixXd A_inv;
    MatrixXd Pi;     // A^-1 Xt' Sigma^-1 Xp, so Xp' = Xp - Xt Pi
    std::vector<MatrixXd> R;    // per j: Xt' dSigma^j Xt
    std::vector<MatrixXd> Q;    // per j: A^-1 Xt' dSigma^j Xp', so Xdot'_j = -Xt Q_j
    std::vector<MatrixXd> Qdd;  // per (j,k): Xddot'_jk = Xt Qdd_jk
    std::vector<MatrixXd> Xp_prime;              // per unit
    std::vector<std::vector<MatrixXd>> Xdot;     // [unit][j]
    std::vector<std::vector<MatrixXd>> Xddot;    // [unit][j * dim + k]
    bool has_second = false;
};

// Requires a bundle with inverse derivatives (order 2 when second is set).
OrthogonalizedDesign orthogonalize(const Design& design, const SigmaBundle& bundle, bool second = true);

SigmaBundle full_bundle(const Design& design, const VectorXd& omega, int order = 2);

// Orthogonal parameterization: z = Y - Xp' psi - Xt xi.
double loglik_orthogonal(const Design& design, const VectorXd& psi, const VectorXd& xi, const VectorXd& omega);
VectorXd xi_from_beta(const Design& design, const VectorXd& beta, const VectorXd& omega);

// Score in (psi, xi, omega) and observed second derivatives in phi = (xi, omega).
VectorXd score_orthogonal(const Design& design, const SigmaBundle& bundle, const OrthogonalizedDesign& orth,
                          const VectorXd& psi, const VectorXd& xi);
MatrixXd observed_hessian_phi(const Design& design, const SigmaBundle& bundle, const OrthogonalizedDesign& orth,
                              const VectorXd& psi, const VectorXd& xi);

// log |-l_phiphi| at (psi, xi, omega of the bundle); throws when the
// observed nuisance information is not positive definite in determinant.
double adjustment_log_det(const Design& design, const SigmaBundle& bundle, const OrthogonalizedDesign& orth,
                          const VectorXd& psi, const VectorXd& xi);

struct AdjustedEval {
    double value = 0.0;       // l_pa(psi)
    double log_det = 0.0;     // log |-l_phiphi|
    FitResult restricted;     // phi-hat(psi)
};

AdjustedEval evaluate_adjusted(const Design& design, const VectorXd& psi,
                               const std::optional<VectorXd>& init = std::nullopt, const FitOptions& opts = {});
double adjusted_profile_loglik(const Design& design, const VectorXd& psi,
                               const std::optional<VectorXd>& init = std::nullopt);

struct AdjustedOptions {
    FitOptions inner;
    OptimOptions outer;
    double fd_step = 1e-3;  // central-difference step in standard-error units
    AdjustedOptions() {
        // psi is measured in standard-error units, where a gradient of 1e-5
        // moves the statistic by O(1e-10); tighter targets sit below the
        // finite-difference noise floor
        outer.f_rel_tol = 0.0;
        outer.f_abs_tol = 1e-9;
        outer.g_tol = 1e-5;
        outer.max_iter = 100;
        outer.value_only_line_search = true;
        inner.newton = true;
        inner.newton_only = true;
        inner.optim.max_iter = 30;  // warm starts converge in a handful of steps
    }
};

// Maximizes l_pa over psi starting from the unrestricted estimate; when l_pa
// is undefined there, the search starts from the restricted fit `alt`.
// l_pa is undefined wherever phi-hat(psi) lies on the feasibility boundary.
FitResult fit_adjusted(const Design& design, const std::optional<FitResult>& ml = std::nullopt,
                       const AdjustedOptions& opts = {}, const std::optional<FitResult>& alt = std::nullopt);

MatrixXd stack_rows(const std::vector<MatrixXd>& blocks);
VectorXd stack_rows(const std::vector<VectorXd>& blocks);

}  // namespace mlmtest
