#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include <Eigen/Dense>

namespace mlmtest {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct OptimOptions {
    int max_iter = 500;
    double f_rel_tol = 1e-10;  // |f_k - f_{k-1}| <= f_rel_tol * max(1, |f_k|)
    double f_abs_tol = 0.0;    // or |f_k - f_{k-1}| <= f_abs_tol
    double g_tol = 1e-6;       // max-norm of the gradient
    double max_step = 5.0;     // cap on the max-norm of a trial step
    bool value_only_line_search = false;  // request gradients only at accepted points
};

inline bool change_small(const OptimOptions& o, double change, double f) {
    return change <= o.f_abs_tol || change <= o.f_rel_tol * std::max(1.0, std::abs(f));
}

struct OptimResult {
    VectorXd x;
    double f = 0.0;
    VectorXd grad;
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
    std::string message;
};

// Objective to minimize; fills *grad when non-null. Throwing mlmtest::Error
// marks the point infeasible (treated as +inf by the line search).
using Objective = std::function<double(const VectorXd&, VectorXd*)>;

OptimResult bfgs_minimize(const Objective& f, const VectorXd& x0, const OptimOptions& opt = {},
                          const MatrixXd* inv_hessian0 = nullptr);

OptimResult nelder_mead_minimize(const std::function<double(const VectorXd&)>& f, const VectorXd& x0,
                                 double step, int max_iter = 2000, double f_tol = 1e-12);

}  // namespace mlmtest
