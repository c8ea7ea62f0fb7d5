#include "mlmtest/testing.hpp"

#include <cmath>

#include "mlmtest/errors.hpp"
#include "mlmtest/numutil.hpp"

namespace mlmtest {

namespace {

void set_value(Statistic& s, double v, int df) {
    s.value = v;
    s.p_value = chisq_sf(v, df);
    s.available = true;
    s.reason.clear();
}

void set_unavailable(Statistic& s, std::string reason) {
    s.value = 0.0;
    s.p_value = 1.0;
    s.available = false;
    s.reason = std::move(reason);
}

// Returns false when the difference is negative beyond tolerance.
bool clamp_difference(double& v, double tol) {
    if (v >= 0.0) return true;
    if (v > -tol) {
        v = 0.0;
        return true;
    }
    return false;
}

}  // namespace

TestReport run_tests(const Design& design, const VectorXd& psi0, const TestOptions& opts) {
    if (psi0.size() != design.p) fail(ErrorKind::invalid_config, "psi0 length does not match the number of interest coefficients");
    TestReport rep;
    rep.df = design.p;
    rep.psi0 = psi0;
    const int p = design.p;

    rep.restricted = fit_restricted(design, psi0, std::nullopt, opts.fit);
    if (!rep.restricted.converged) fail(ErrorKind::non_convergence, "restricted fit did not converge: " + rep.restricted.message);
    FitOptions warm = opts.fit;
    warm.newton = true;  // the restricted estimate is a close start
    rep.ml = fit_ml(design, rep.restricted.omega_hat, warm);
    if (!rep.ml.converged) {
        // a fresh start occasionally escapes a poor warm start
        FitResult alt = fit_ml(design, std::nullopt, opts.fit);
        if (alt.converged) rep.ml = alt;
    }
    if (!rep.ml.converged) fail(ErrorKind::non_convergence, "unrestricted fit did not converge: " + rep.ml.message);
    if (rep.ml.boundary) rep.flags.push_back("ml-boundary");
    if (rep.restricted.boundary) rep.flags.push_back("restricted-boundary");

    double lr = 2.0 * (rep.ml.loglik - rep.restricted.loglik);
    if (!clamp_difference(lr, opts.negative_tol)) {
        fail(ErrorKind::non_convergence, "unrestricted maximum below restricted maximum");
    }
    set_value(rep.LR, lr, p);

    // the restricted estimates, the Bartlett constants and l_pa(psi0) share one bundle
    std::optional<SigmaBundle> bundle;
    std::optional<OrthogonalizedDesign> orth;
    try {
        bundle = full_bundle(design, rep.restricted.omega_hat, 2);
        orth = orthogonalize(design, *bundle, true);
        rep.constants = bartlett_constants(design, *bundle, *orth, psi0, opts.path, opts.variant);
        rep.C = rep.constants.C;
        rep.C_star = rep.constants.C_star;
        rep.constants_available = std::isfinite(rep.C) && std::isfinite(rep.C_star);
    } catch (const Error& e) {
        rep.flags.push_back(std::string("corrections-failed: ") + e.what());
    }

    if (!rep.constants_available) set_unavailable(rep.LR_star, "Bartlett constant unavailable");
    else if (!rep.constants.C_usable) set_unavailable(rep.LR_star, "1 + C/p is not positive");
    else set_value(rep.LR_star, lr / (1.0 + rep.C / p), p);

    if (!opts.cox_reid) {
        set_unavailable(rep.LR_cr, "not requested");
        set_unavailable(rep.LR_cr_star, "not requested");
        return rep;
    }

    if (rep.restricted.boundary) {
        set_unavailable(rep.LR_cr, "restricted estimate on the feasibility boundary; adjusted profile undefined");
        set_unavailable(rep.LR_cr_star, rep.LR_cr.reason);
        return rep;
    }
    try {
        if (!bundle || !orth) fail(ErrorKind::singular_information, "null bundle unavailable");
        rep.adjusted_null =
            rep.restricted.loglik - 0.5 * adjustment_log_det(design, *bundle, *orth, psi0, rep.restricted.xi_hat);
        rep.adjusted = fit_adjusted(design, rep.ml, opts.adjusted, rep.restricted);
        rep.has_adjusted = true;
    } catch (const Error& e) {
        set_unavailable(rep.LR_cr, std::string("adjusted profile failed: ") + e.what());
        set_unavailable(rep.LR_cr_star, rep.LR_cr.reason);
        return rep;
    }
    if (rep.adjusted.boundary) rep.flags.push_back("adjusted-boundary");
    if (!rep.adjusted.converged) {
        set_unavailable(rep.LR_cr, "adjusted-profile maximizer did not converge");
        set_unavailable(rep.LR_cr_star, rep.LR_cr.reason);
        return rep;
    }
    double lrcr = 2.0 * (rep.adjusted.adjusted_loglik - rep.adjusted_null);
    if (!clamp_difference(lrcr, opts.negative_tol)) {
        set_unavailable(rep.LR_cr, "adjusted-profile maximum below its null value");
        set_unavailable(rep.LR_cr_star, rep.LR_cr.reason);
        return rep;
    }
    set_value(rep.LR_cr, lrcr, p);
    if (!rep.constants_available) set_unavailable(rep.LR_cr_star, "Bartlett constant unavailable");
    else if (!rep.constants.C_star_usable) set_unavailable(rep.LR_cr_star, "1 + C*/p is not positive");
    else set_value(rep.LR_cr_star, lrcr / (1.0 + rep.C_star / p), p);
    return rep;
}

TestReport run_tests(const LongitudinalDataset& data, const ModelSpec& spec, const std::optional<VectorXd>& psi0,
                     const TestOptions& opts) {
    const Design design = build_design(data, spec);
    return run_tests(design, psi0 ? *psi0 : VectorXd(VectorXd::Zero(design.p)), opts);
}

}  // namespace mlmtest
