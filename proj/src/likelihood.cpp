#include "mlmtest/likelihood.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "mlmtest/errors.hpp"
#include "mlmtest/numutil.hpp"

namespace mlmtest {

namespace {

const double log_2pi = std::log(2.0 * std::numbers::pi);

CovarianceModel checked_model(const CovarianceFamily& fam, const VectorXd& omega) {
    CovarianceModel model(fam, omega);
    if (!model.feasible_closed()) fail(ErrorKind::infeasible_omega, "omega is outside the feasible region");
    return model;
}

Eigen::LLT<MatrixXd> unit_chol(const CovarianceModel& model, const MatrixXd& Z) {
    Eigen::LLT<MatrixXd> llt;
    if (!try_cholesky(unit_sigma(model, Z), llt)) {
        fail(ErrorKind::not_positive_definite, "unit covariance block is not positive definite");
    }
    return llt;
}

MatrixXd spd_inverse(const MatrixXd& a, ErrorKind kind, const char* what) {
    Eigen::LLT<MatrixXd> llt;
    if (!try_cholesky(a, llt)) fail(kind, what);
    MatrixXd inv = llt.solve(MatrixXd::Identity(a.rows(), a.cols()));
    return 0.5 * (inv + inv.transpose());
}

}  // namespace

MatrixXd stack_rows(const std::vector<MatrixXd>& blocks) {
    Eigen::Index rows = 0;
    const Eigen::Index cols = blocks.empty() ? 0 : blocks.front().cols();
    for (const auto& b : blocks) rows += b.rows();
    MatrixXd out(rows, cols);
    Eigen::Index r = 0;
    for (const auto& b : blocks) {
        out.middleRows(r, b.rows()) = b;
        r += b.rows();
    }
    return out;
}

VectorXd stack_rows(const std::vector<VectorXd>& blocks) {
    Eigen::Index rows = 0;
    for (const auto& b : blocks) rows += b.size();
    VectorXd out(rows);
    Eigen::Index r = 0;
    for (const auto& b : blocks) {
        out.segment(r, b.size()) = b;
        r += b.size();
    }
    return out;
}

GlsProfile::GlsProfile(const Design& design, std::optional<VectorXd> psi0)
    : design_(design), psi0_(std::move(psi0)) {
    const int N = design.N();
    y_.resize(N);
    X_.resize(N);
    if (psi0_) {
        if (psi0_->size() != design.p) throw std::invalid_argument("GlsProfile: psi0 has the wrong length");
        for (int i = 0; i < N; ++i) {
            y_[i] = design.y[i] - design.Xp(i) * (*psi0_);
            X_[i] = design.Xt(i);
        }
    } else {
        y_ = design.y;
        X_ = design.X;
    }
}

GlsProfile::Eval GlsProfile::evaluate(const VectorXd& omega, int order) const {
    const auto& fam = design_.family;
    const CovarianceModel model = checked_model(fam, omega);
    const int N = design_.N();
    const int dim = fam.dim();
    const auto k = X_.empty() ? 0 : X_[0].cols();

    std::vector<Eigen::LLT<MatrixXd>> chol(N);
    std::vector<MatrixXd> VX(N);
    MatrixXd xtvx = MatrixXd::Zero(k, k);
    VectorXd xtvy = VectorXd::Zero(k);
    double yvy = 0.0, logdet = 0.0;
    for (int i = 0; i < N; ++i) {
        chol[i] = unit_chol(model, design_.Z[i]);
        logdet += 2.0 * chol[i].matrixLLT().diagonal().array().log().sum();
        VX[i] = chol[i].solve(X_[i]);
        const VectorXd Vy = chol[i].solve(y_[i]);
        xtvx.noalias() += X_[i].transpose() * VX[i];
        xtvy.noalias() += VX[i].transpose() * y_[i];
        yvy += y_[i].dot(Vy);
    }
    Eval e;
    Eigen::LLT<MatrixXd> xchol;
    if (k > 0) {
        if (!try_cholesky(xtvx, xchol)) fail(ErrorKind::rank_deficient_design, "GLS normal matrix is singular");
        e.coef = xchol.solve(xtvy);
    } else {
        e.coef = VectorXd();
    }
    const double quad = yvy - (k > 0 ? e.coef.dot(xtvy) : 0.0);
    e.loglik = -0.5 * design_.T() * log_2pi - 0.5 * logdet - 0.5 * quad;
    if (order < 1) return e;

    e.grad = VectorXd::Zero(dim);
    if (order >= 2) e.hess = MatrixXd::Zero(dim, dim);
    MatrixXd hbw = MatrixXd::Zero(k, dim);
    std::vector<MatrixXd> d1, d2, a(dim);
    std::vector<VectorXd> w(dim);
    for (int i = 0; i < N; ++i) {
        const auto tau = y_[i].size();
        VectorXd r = y_[i];
        if (k > 0) r.noalias() -= X_[i] * e.coef;
        const VectorXd s = chol[i].solve(r);
        const MatrixXd Vinv = chol[i].solve(MatrixXd::Identity(tau, tau));
        unit_sigma_d1(model, design_.Z[i], d1);
        for (int j = 0; j < dim; ++j) {
            w[j] = d1[j] * s;
            e.grad(j) += -0.5 * (Vinv.cwiseProduct(d1[j]).sum() - s.dot(w[j]));
        }
        if (order < 2) continue;
        unit_sigma_d2(model, design_.Z[i], d2);
        for (int j = 0; j < dim; ++j) {
            a[j] = Vinv * d1[j];
            if (k > 0) hbw.col(j) -= VX[i].transpose() * w[j];
        }
        for (int j = 0; j < dim; ++j) {
            const VectorXd vw = Vinv * w[j];
            for (int l = j; l < dim; ++l) {
                const MatrixXd& djl = d2[j * dim + l];
                double h = 0.5 * a[j].cwiseProduct(a[l].transpose()).sum() - vw.dot(w[l]);
                if (!fam.is_linear()) h += -0.5 * Vinv.cwiseProduct(djl).sum() + 0.5 * s.dot(djl * s);
                e.hess(j, l) += h;
                if (l != j) e.hess(l, j) += h;
            }
        }
    }
    if (order >= 2 && k > 0) e.hess.noalias() += hbw.transpose() * xchol.solve(hbw);
    return e;
}

double loglik(const Design& design, const VectorXd& beta, const VectorXd& omega) {
    const CovarianceModel model = checked_model(design.family, omega);
    if (beta.size() != design.n) throw std::invalid_argument("loglik: beta has the wrong length");
    double ll = -0.5 * design.T() * log_2pi;
    for (int i = 0; i < design.N(); ++i) {
        const auto chol = unit_chol(model, design.Z[i]);
        const VectorXd r = design.y[i] - design.X[i] * beta;
        ll -= chol.matrixLLT().diagonal().array().log().sum();
        ll -= 0.5 * r.dot(chol.solve(r));
    }
    return ll;
}

VectorXd default_start(const Design& design) {
    const auto& fam = design.family;
    MatrixXd xtx = MatrixXd::Zero(design.n, design.n);
    VectorXd xty = VectorXd::Zero(design.n);
    for (int i = 0; i < design.N(); ++i) {
        xtx.noalias() += design.X[i].transpose() * design.X[i];
        xty.noalias() += design.X[i].transpose() * design.y[i];
    }
    const VectorXd b = xtx.ldlt().solve(xty);
    double rss = 0.0;
    for (int i = 0; i < design.N(); ++i) rss += (design.y[i] - design.X[i] * b).squaredNorm();
    double s2 = rss / std::max(1, design.T() - design.n);
    if (!(s2 > 0.0) || !std::isfinite(s2)) s2 = 1.0;

    VectorXd omega = VectorXd::Zero(fam.dim());
    const double share = fam.q > 0 ? 0.5 : 1.0;
    for (int a = 0; a < fam.q; ++a) {
        double zz = 0.0;
        for (int i = 0; i < design.N(); ++i) zz += design.Z[i].col(a).squaredNorm();
        zz /= design.T();
        omega(fam.g_index(a, a)) = (1.0 - share) * s2 / std::max(zz, 1e-12);
    }
    if (fam.errors == ErrorStructure::ar1) omega(fam.rho_index()) = 0.2;
    omega(fam.variance_index()) = share * s2;
    return omega;
}

namespace {

// Newton refinement of a BFGS solution in native omega coordinates. Each step
// must stay feasible and must not lower the log-likelihood.
VectorXd newton_polish(const GlsProfile& prof, VectorXd omega, int max_steps = 8) {
    const auto& fam = prof.design().family;
    for (int it = 0; it < max_steps; ++it) {
        GlsProfile::Eval e;
        try {
            e = prof.evaluate(omega, 2);
        } catch (const Error&) {
            break;
        }
        Eigen::LLT<MatrixXd> llt;
        if (!try_cholesky(-e.hess, llt)) break;
        const VectorXd step = llt.solve(e.grad);
        if (step.cwiseAbs().maxCoeff() <= 1e-15 * std::max(1.0, omega.cwiseAbs().maxCoeff())) break;
        bool moved = false;
        for (double t = 1.0; t > 1e-3; t *= 0.5) {
            const VectorXd cand = omega + t * step;
            CovarianceModel m(fam, cand);
            if (!m.feasible()) continue;
            try {
                const double ll = prof.evaluate(cand, 0).loglik;
                if (ll >= e.loglik - 1e-12 * std::abs(e.loglik)) {
                    omega = cand;
                    moved = true;
                }
            } catch (const Error&) {
            }
            break;
        }
        if (!moved) break;
        if (step.cwiseAbs().maxCoeff() < 1e-12 * std::max(1.0, omega.cwiseAbs().maxCoeff())) break;
    }
    return omega;
}

struct NewtonOutcome {
    VectorXd omega;
    int iterations = 0;
    bool converged = false;
};

double scaled_gradient_norm(const CovarianceFamily& fam, const VectorXd& omega, const VectorXd& grad) {
    const VectorXd theta = to_unconstrained(fam, omega);
    return (unconstrained_jacobian(fam, theta).transpose() * grad).cwiseAbs().maxCoeff();
}

// Damped Newton ascent on the profile log-likelihood in native omega. The
// Hessian is shifted towards a scaled identity whenever it is not negative
// definite or the step fails to increase the log-likelihood.
NewtonOutcome newton_maximize(const GlsProfile& prof, VectorXd omega, const OptimOptions& opt) {
    const auto& fam = prof.design().family;
    NewtonOutcome out;
    double lambda = 0.0;
    for (int it = 0; it < opt.max_iter; ++it) {
        out.iterations = it + 1;
        GlsProfile::Eval e;
        try {
            e = prof.evaluate(omega, 2);
        } catch (const Error&) {
            break;
        }
        if (scaled_gradient_norm(fam, omega, e.grad) < opt.g_tol) {
            Eigen::LLT<MatrixXd> llt;
            out.converged = try_cholesky(-e.hess, llt);
            break;
        }
        const MatrixXd Hn = -e.hess;
        const VectorXd scale = Hn.diagonal().cwiseAbs().cwiseMax(1e-8);
        bool moved = false;
        for (int attempt = 0; attempt < 12 && !moved; ++attempt) {
            Eigen::LLT<MatrixXd> llt;
            MatrixXd Hs = Hn;
            Hs.diagonal() += lambda * scale;
            if (!try_cholesky(Hs, llt)) {
                lambda = lambda == 0.0 ? 1e-4 : lambda * 10.0;
                continue;
            }
            const VectorXd step = llt.solve(e.grad);
            for (double t = 1.0; t > 1e-4 && !moved; t *= 0.5) {
                const VectorXd cand = omega + t * step;
                if (!CovarianceModel(fam, cand).feasible()) continue;
                try {
                    const double ll = prof.evaluate(cand, 0).loglik;
                    // full steps may tie within round-off once the quadratic model is exact
                    const double noise = 1e-13 * std::max(1.0, std::abs(e.loglik));
                    if (ll > e.loglik || (t == 1.0 && ll >= e.loglik - noise)) {
                        omega = cand;
                        moved = true;
                    }
                } catch (const Error&) {
                }
            }
            if (moved) lambda = lambda > 0.0 ? lambda * 0.1 : 0.0;
            else lambda = lambda == 0.0 ? 1e-4 : lambda * 10.0;
            if (lambda < 1e-8) lambda = 0.0;
        }
        if (!moved) {
            // no ascent direction left: stationary to working precision
            try {
                const auto f = prof.evaluate(omega, 2);
                Eigen::LLT<MatrixXd> llt;
                out.converged = scaled_gradient_norm(fam, omega, f.grad) < opt.g_tol && try_cholesky(-f.hess, llt);
            } catch (const Error&) {
            }
            break;
        }
    }
    out.omega = omega;
    return out;
}

FitResult fit_profile(const GlsProfile& prof, const VectorXd& omega0, const FitOptions& opts) {
    const Design& d = prof.design();
    const auto& fam = d.family;
    {
        CovarianceModel m0(fam, omega0);
        if (!m0.feasible()) fail(ErrorKind::infeasible_omega, "starting omega is infeasible");
    }
    Objective obj = [&](const VectorXd& theta, VectorXd* grad) {
        const VectorXd omega = from_unconstrained(fam, theta);
        const auto e = prof.evaluate(omega, grad ? 1 : 0);
        if (grad) *grad = -(unconstrained_jacobian(fam, theta).transpose() * e.grad);
        return -e.loglik;
    };
    if (opts.newton) {
        const NewtonOutcome nt = newton_maximize(prof, omega0, opts.optim);
        if (nt.converged) {
            const auto e = prof.evaluate(nt.omega, 1);
            FitResult fit;
            fit.iterations = nt.iterations;
            fit.omega_hat = nt.omega;
            fit.loglik = e.loglik;
            fit.gradient_norm = scaled_gradient_norm(fam, nt.omega, e.grad);
            fit.converged = true;
            fit.boundary = CovarianceModel(fam, nt.omega).near_boundary(opts.boundary_tol);
            fit.message = "converged";
            return fit;
        }
        if (opts.newton_only) {
            FitResult fit;
            fit.iterations = nt.iterations;
            fit.omega_hat = nt.omega;
            fit.loglik = prof.evaluate(nt.omega, 0).loglik;
            fit.gradient_norm = std::numeric_limits<double>::infinity();
            fit.boundary = CovarianceModel(fam, nt.omega).near_boundary(opts.boundary_tol);
            fit.message = "Newton iteration did not reach a stationary point";
            return fit;
        }
    }
    const VectorXd theta0 = to_unconstrained(fam, omega0);
    OptimResult r = bfgs_minimize(obj, theta0, opts.optim);
    int iterations = r.iterations;
    if (!r.converged && std::isfinite(r.f)) {
        // stalls near the optimum are usually round-off in the objective:
        // Newton steps only need the gradient and Hessian
        const NewtonOutcome nt = newton_maximize(prof, from_unconstrained(fam, r.x), opts.optim);
        iterations += nt.iterations;
        if (nt.converged) {
            r.x = to_unconstrained(fam, nt.omega);
            r.f = -prof.evaluate(nt.omega, 0).loglik;
            r.converged = true;
            r.message = "converged after Newton refinement";
        }
    }
    if (!r.converged) {
        // simplex restart from the best point, then quasi-Newton again
        const VectorXd from = std::isfinite(r.f) ? r.x : theta0;
        auto nm = nelder_mead_minimize([&](const VectorXd& t) { return obj(t, nullptr); }, from, 0.5);
        OptimResult r2 = bfgs_minimize(obj, nm.x, opts.optim);
        iterations += nm.iterations + r2.iterations;
        if (r2.converged || r2.f < r.f) r = r2;
    }

    FitResult fit;
    fit.iterations = iterations;
    fit.message = r.message;
    VectorXd omega = from_unconstrained(fam, r.x);
    bool polished = false;
    if (opts.polish && std::isfinite(r.f)) {
        const VectorXd refined = newton_polish(prof, omega);
        polished = refined != omega;
        omega = refined;
    }
    const auto e = prof.evaluate(omega, 1);
    CovarianceModel model(fam, omega);
    if (model.feasible()) {
        const VectorXd theta = to_unconstrained(fam, omega);
        fit.gradient_norm = (unconstrained_jacobian(fam, theta).transpose() * e.grad).cwiseAbs().maxCoeff();
    } else {
        fit.gradient_norm = r.grad.size() ? r.grad.cwiseAbs().maxCoeff() : std::numeric_limits<double>::infinity();
    }
    fit.converged = (r.converged || polished) && fit.gradient_norm < opts.optim.g_tol && model.feasible();
    fit.omega_hat = omega;
    fit.loglik = e.loglik;
    fit.boundary = model.near_boundary(opts.boundary_tol);
    if (!fit.converged && fit.message.empty()) fit.message = "convergence criteria not met";
    return fit;
}

// Dispersed starting points around a default start: G scaled up and down,
// strong intercept-slope correlations, and alternative AR(1) correlations.
// The likelihood can have several local maxima in small samples.
std::vector<VectorXd> extra_starts(const CovarianceFamily& fam, const VectorXd& base) {
    std::vector<VectorXd> out;
    auto scaled = [&](double scale) {
        VectorXd om = base;
        for (int a = 0; a < fam.q; ++a)
            for (int b = a; b < fam.q; ++b) om(fam.g_index(a, b)) *= scale;
        return om;
    };
    if (fam.q > 0) {
        for (double scale : {10.0, 0.1}) out.push_back(scaled(scale));
    }
    if (fam.q > 1) {
        for (double r : {-0.9, 0.9}) {
            VectorXd om = scaled(4.0);
            om(fam.g_index(0, 1)) = r * std::sqrt(om(fam.g_index(0, 0)) * om(fam.g_index(1, 1)));
            out.push_back(om);
        }
    }
    if (fam.errors == ErrorStructure::ar1) {
        for (double rho : {-0.5, 0.7}) {
            VectorXd om = base;
            om(fam.rho_index()) = rho;
            out.push_back(om);
        }
    }
    return out;
}

FitResult fit_best(const GlsProfile& prof, const VectorXd& omega0, const FitOptions& opts) {
    FitResult best = fit_profile(prof, omega0, opts);
    if (!opts.multistart || opts.newton_only) return best;
    const auto& fam = prof.design().family;
    FitOptions single = opts;
    single.newton = false;
    for (const VectorXd& start : extra_starts(fam, default_start(prof.design()))) {
        if (!CovarianceModel(fam, start).feasible()) continue;
        FitResult f;
        try {
            f = fit_profile(prof, start, single);
        } catch (const Error&) {
            continue;
        }
        // replace only on a clear improvement, so ties keep the primary start
        if (f.converged && (!best.converged || f.loglik > best.loglik + 1e-8)) {
            f.iterations += best.iterations;
            best = f;
        }
    }
    return best;
}

MatrixXd nuisance_projection(const Design& d, const VectorXd& omega, VectorXd* xi_rhs = nullptr, MatrixXd* A_out = nullptr) {
    const CovarianceModel model = checked_model(d.family, omega);
    const int nu = d.nuisance();
    MatrixXd A = MatrixXd::Zero(nu, nu), B = MatrixXd::Zero(nu, d.p);
    VectorXd b = VectorXd::Zero(nu);
    for (int i = 0; i < d.N(); ++i) {
        const auto chol = unit_chol(model, d.Z[i]);
        const MatrixXd VXt = chol.solve(MatrixXd(d.Xt(i)));
        A.noalias() += d.Xt(i).transpose() * VXt;
        B.noalias() += VXt.transpose() * d.Xp(i);
        b.noalias() += VXt.transpose() * d.y[i];
    }
    if (A_out) *A_out = A;
    if (nu == 0) {
        if (xi_rhs) *xi_rhs = VectorXd();
        return MatrixXd(0, d.p);
    }
    Eigen::LLT<MatrixXd> llt;
    if (!try_cholesky(A, llt)) fail(ErrorKind::rank_deficient_design, "nuisance design is rank deficient");
    if (xi_rhs) *xi_rhs = llt.solve(b);
    return llt.solve(B);
}

}  // namespace

FitResult fit_ml(const Design& design, const std::optional<VectorXd>& init, const FitOptions& opts) {
    GlsProfile prof(design);
    FitResult fit = fit_best(prof, init ? *init : default_start(design), opts);
    fit.beta_hat = prof.evaluate(fit.omega_hat, 0).coef;
    fit.psi = fit.beta_hat.head(design.p);
    VectorXd xi;
    nuisance_projection(design, fit.omega_hat, &xi);
    fit.xi_hat = xi;
    return fit;
}

FitResult fit_restricted(const Design& design, const VectorXd& psi0, const std::optional<VectorXd>& init,
                         const FitOptions& opts) {
    GlsProfile prof(design, psi0);
    FitResult fit = fit_best(prof, init ? *init : default_start(design), opts);
    const VectorXd varsigma = prof.evaluate(fit.omega_hat, 0).coef;
    fit.beta_hat.resize(design.n);
    fit.beta_hat.head(design.p) = psi0;
    fit.beta_hat.tail(design.nuisance()) = varsigma;
    fit.psi = psi0;
    const MatrixXd Pi = nuisance_projection(design, fit.omega_hat);
    fit.xi_hat = design.nuisance() > 0 ? VectorXd(varsigma + Pi * psi0) : VectorXd();
    return fit;
}

SigmaBundle full_bundle(const Design& design, const VectorXd& omega, int order) {
    return derived_inverse_derivatives(build_sigma(CovarianceModel(design.family, omega), design.Z, design.tau, order));
}

OrthogonalizedDesign orthogonalize(const Design& d, const SigmaBundle& bundle, bool second) {
    if (!bundle.has_inverse_derivatives) throw std::invalid_argument("orthogonalize: bundle lacks inverse derivatives");
    if (second && bundle.order < 2) throw std::invalid_argument("orthogonalize: bundle lacks second derivatives");
    const int N = d.N(), nu = d.nuisance(), p = d.p, dim = bundle.dim();
    OrthogonalizedDesign o;
    o.n = d.n;
    o.p = p;
    o.dim = dim;
    o.has_second = second;
    o.A = MatrixXd::Zero(nu, nu);
    MatrixXd B = MatrixXd::Zero(nu, p);
    for (int i = 0; i < N; ++i) {
        const MatrixXd& V = bundle.units[i].inv;
        const MatrixXd VXt = V * d.Xt(i);
        o.A.noalias() += d.Xt(i).transpose() * VXt;
        B.noalias() += VXt.transpose() * d.Xp(i);
    }
    if (nu > 0) {
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(o.A, Eigen::EigenvaluesOnly);
        const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
        if (!(lo > 0.0) || hi / lo > 1e12) {
            fail(ErrorKind::rank_deficient_design, "nuisance design is rank deficient in the Sigma^-1 metric");
        }
        o.A_inv = spd_inverse(o.A, ErrorKind::rank_deficient_design, "nuisance design is rank deficient");
        o.Pi = o.A_inv * B;
    } else {
        o.A_inv = MatrixXd(0, 0);
        o.Pi = MatrixXd(0, p);
    }
    o.Xp_prime.resize(N);
    for (int i = 0; i < N; ++i) o.Xp_prime[i] = d.Xp(i) - d.Xt(i) * o.Pi;

    o.R.assign(dim, MatrixXd::Zero(nu, nu));
    std::vector<MatrixXd> S(dim, MatrixXd::Zero(nu, p));
    for (int i = 0; i < N; ++i) {
        const auto Xt = d.Xt(i);
        for (int j = 0; j < dim; ++j) {
            const MatrixXd DXt = bundle.units[i].d1inv[j] * Xt;
            o.R[j].noalias() += Xt.transpose() * DXt;
            S[j].noalias() += DXt.transpose() * o.Xp_prime[i];
        }
    }
    o.Q.resize(dim);
    for (int j = 0; j < dim; ++j) o.Q[j] = nu > 0 ? MatrixXd(o.A_inv * S[j]) : MatrixXd(0, p);
    o.Xdot.assign(N, std::vector<MatrixXd>(dim));
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < dim; ++j) o.Xdot[i][j] = -(d.Xt(i) * o.Q[j]);
    if (!second) return o;

    o.Qdd.assign(static_cast<size_t>(dim) * dim, MatrixXd::Zero(nu, p));
    if (nu > 0) {
        std::vector<MatrixXd> S2(static_cast<size_t>(dim) * dim, MatrixXd::Zero(nu, p));
        for (int i = 0; i < N; ++i) {
            const auto Xt = d.Xt(i);
            for (int j = 0; j < dim; ++j)
                for (int k = j; k < dim; ++k)
                    S2[j * dim + k].noalias() += Xt.transpose() * (bundle.units[i].d2inv[j * dim + k] * o.Xp_prime[i]);
        }
        for (int j = 0; j < dim; ++j) {
            for (int k = j; k < dim; ++k) {
                const MatrixXd q = o.A_inv * (o.R[k] * o.Q[j] + o.R[j] * o.Q[k] - S2[j * dim + k]);
                o.Qdd[j * dim + k] = q;
                o.Qdd[k * dim + j] = q;
            }
        }
    }
    o.Xddot.assign(N, std::vector<MatrixXd>(static_cast<size_t>(dim) * dim));
    for (int i = 0; i < N; ++i)
        for (size_t jk = 0; jk < o.Qdd.size(); ++jk) o.Xddot[i][jk] = d.Xt(i) * o.Qdd[jk];
    return o;
}

VectorXd xi_from_beta(const Design& design, const VectorXd& beta, const VectorXd& omega) {
    const MatrixXd Pi = nuisance_projection(design, omega);
    if (design.nuisance() == 0) return VectorXd();
    return beta.tail(design.nuisance()) + Pi * beta.head(design.p);
}

double loglik_orthogonal(const Design& d, const VectorXd& psi, const VectorXd& xi, const VectorXd& omega) {
    const MatrixXd Pi = nuisance_projection(d, omega);
    const CovarianceModel model = checked_model(d.family, omega);
    double ll = -0.5 * d.T() * log_2pi;
    for (int i = 0; i < d.N(); ++i) {
        const MatrixXd Xpp = d.Xp(i) - d.Xt(i) * Pi;
        VectorXd z = d.y[i] - Xpp * psi;
        if (d.nuisance() > 0) z -= d.Xt(i) * xi;
        const auto chol = unit_chol(model, d.Z[i]);
        ll -= chol.matrixLLT().diagonal().array().log().sum();
        ll -= 0.5 * z.dot(chol.solve(z));
    }
    return ll;
}

namespace {

VectorXd residual_z(const Design& d, const OrthogonalizedDesign& o, int i, const VectorXd& psi, const VectorXd& xi) {
    VectorXd z = d.y[i] - o.Xp_prime[i] * psi;
    if (d.nuisance() > 0) z -= d.Xt(i) * xi;
    return z;
}

}  // namespace

VectorXd score_orthogonal(const Design& d, const SigmaBundle& bundle, const OrthogonalizedDesign& o,
                          const VectorXd& psi, const VectorXd& xi) {
    const int p = d.p, nu = d.nuisance(), dim = bundle.dim();
    VectorXd g = VectorXd::Zero(p + nu + dim);
    for (int i = 0; i < d.N(); ++i) {
        const auto& u = bundle.units[i];
        const VectorXd z = residual_z(d, o, i, psi, xi);
        const VectorXd vz = u.inv * z;
        g.head(p) += o.Xp_prime[i].transpose() * vz;
        if (nu > 0) g.segment(p, nu) += d.Xt(i).transpose() * vz;
        for (int j = 0; j < dim; ++j) {
            g(p + nu + j) += -0.5 * u.inv.cwiseProduct(u.d1[j]).sum() - 0.5 * z.dot(u.d1inv[j] * z) +
                             (o.Xdot[i][j] * psi).dot(vz);
        }
    }
    return g;
}

MatrixXd observed_hessian_phi(const Design& d, const SigmaBundle& bundle, const OrthogonalizedDesign& o,
                              const VectorXd& psi, const VectorXd& xi) {
    if (!o.has_second) throw std::invalid_argument("observed_hessian_phi: orthogonalized design lacks second derivatives");
    const int nu = d.nuisance(), dim = bundle.dim();
    MatrixXd H = MatrixXd::Zero(nu + dim, nu + dim);
    if (nu > 0) H.topLeftCorner(nu, nu) = -o.A;
    std::vector<VectorXd> ud(dim), Dz(dim);
    for (int i = 0; i < d.N(); ++i) {
        const auto& u = bundle.units[i];
        const VectorXd z = residual_z(d, o, i, psi, xi);
        const VectorXd vz = u.inv * z;
        VectorXd yx = d.y[i];
        if (nu > 0) yx -= d.Xt(i) * xi;
        for (int j = 0; j < dim; ++j) {
            ud[j] = o.Xdot[i][j] * psi;
            Dz[j] = u.d1inv[j] * z;
            if (nu > 0) H.block(0, nu + j, nu, 1) += d.Xt(i).transpose() * (u.d1inv[j] * yx);
        }
        for (int j = 0; j < dim; ++j) {
            for (int k = j; k < dim; ++k) {
                const size_t jk = static_cast<size_t>(j) * dim + k;
                double h = -0.5 * u.d1inv[j].cwiseProduct(u.d1[k]).sum();
                if (!bundle.family.is_linear()) h -= 0.5 * u.inv.cwiseProduct(u.d2[jk]).sum();
                h -= ud[k].dot(u.inv * ud[j]);
                h += (o.Xddot[i][jk] * psi).dot(vz) + ud[k].dot(Dz[j]) + ud[j].dot(Dz[k]);
                h -= 0.5 * z.dot(u.d2inv[jk] * z);
                H(nu + j, nu + k) += h;
                if (k != j) H(nu + k, nu + j) += h;
            }
        }
    }
    if (nu > 0) H.bottomLeftCorner(dim, nu) = H.topRightCorner(nu, dim).transpose();
    return H;
}

double adjustment_log_det(const Design& design, const SigmaBundle& bundle, const OrthogonalizedDesign& orth,
                          const VectorXd& psi, const VectorXd& xi) {
    const MatrixXd H = observed_hessian_phi(design, bundle, orth, psi, xi);
    Eigen::PartialPivLU<MatrixXd> lu(-H);
    const MatrixXd& LU = lu.matrixLU();
    double log_abs = 0.0;
    int sign = lu.permutationP().determinant();
    for (Eigen::Index i = 0; i < LU.rows(); ++i) {
        const double v = LU(i, i);
        if (v == 0.0 || !std::isfinite(v)) sign = 0;
        else {
            if (v < 0.0) sign = -sign;
            log_abs += std::log(std::abs(v));
        }
    }
    if (sign <= 0) {
        fail(ErrorKind::singular_observed_information, "observed information in the nuisance parameters has non-positive determinant");
    }
    return log_abs;
}

AdjustedEval evaluate_adjusted(const Design& design, const VectorXd& psi, const std::optional<VectorXd>& init,
                               const FitOptions& opts) {
    AdjustedEval out;
    out.restricted = fit_restricted(design, psi, init, opts);
    if (!out.restricted.converged) fail(ErrorKind::non_convergence, "restricted fit did not converge: " + out.restricted.message);
    if (out.restricted.boundary) {
        fail(ErrorKind::infeasible_omega, "restricted estimate lies on the feasibility boundary; the adjusted profile likelihood is undefined");
    }
    const SigmaBundle bundle = full_bundle(design, out.restricted.omega_hat, 2);
    const OrthogonalizedDesign orth = orthogonalize(design, bundle, true);
    out.log_det = adjustment_log_det(design, bundle, orth, psi, out.restricted.xi_hat);
    out.value = out.restricted.loglik - 0.5 * out.log_det;
    out.restricted.adjusted_loglik = out.value;
    return out;
}

double adjusted_profile_loglik(const Design& design, const VectorXd& psi, const std::optional<VectorXd>& init) {
    return evaluate_adjusted(design, psi, init).value;
}

FitResult fit_adjusted(const Design& design, const std::optional<FitResult>& ml_in, const AdjustedOptions& opts,
                       const std::optional<FitResult>& alt) {
    const FitResult ml = ml_in ? *ml_in : fit_ml(design, std::nullopt, opts.inner);
    const int p = design.p;
    const VectorXd psi_hat = ml.beta_hat.head(p);

    // scale psi by its standard errors so the outer problem is well conditioned
    const SigmaBundle bml = full_bundle(design, ml.omega_hat, 1);
    const OrthogonalizedDesign oml = orthogonalize(design, bml, false);
    MatrixXd W = MatrixXd::Zero(p, p);
    for (int i = 0; i < design.N(); ++i)
        W.noalias() += oml.Xp_prime[i].transpose() * bml.units[i].inv * oml.Xp_prime[i];
    const MatrixXd Winv = spd_inverse(W, ErrorKind::singular_information, "interest information is singular");
    const VectorXd se = Winv.diagonal().cwiseSqrt();
    auto to_psi = [&](const VectorXd& u) { return VectorXd(psi_hat + se.cwiseProduct(u)); };

    VectorXd warm = ml.omega_hat;
    AdjustedEval best;
    bool have_best = false;
    auto eval_at = [&](const VectorXd& psi, const VectorXd& start) {
        return evaluate_adjusted(design, psi, start, opts.inner);
    };
    Objective obj = [&](const VectorXd& u, VectorXd* grad) {
        const VectorXd psi = to_psi(u);
        const AdjustedEval e = eval_at(psi, warm);
        warm = e.restricted.omega_hat;
        if (!have_best || e.value > best.value) {
            best = e;
            have_best = true;
        }
        if (grad) {
            grad->resize(p);
            for (int a = 0; a < p; ++a) {
                VectorXd up = u, dn = u;
                up(a) += opts.fd_step;
                dn(a) -= opts.fd_step;
                const double fp = eval_at(to_psi(up), warm).value;
                const double fm = eval_at(to_psi(dn), warm).value;
                (*grad)(a) = -(fp - fm) / (2.0 * opts.fd_step);
            }
        }
        return -e.value;
    };
    const MatrixXd H0 = se.asDiagonal() * W * se.asDiagonal();
    const MatrixXd H0inv = spd_inverse(H0, ErrorKind::singular_information, "interest information is singular");
    VectorXd u0 = VectorXd::Zero(p);
    bool start_ok = !ml.boundary;
    if (start_ok) {
        try {
            obj(u0, nullptr);
        } catch (const Error&) {
            start_ok = false;
        }
    }
    if (!start_ok && alt) {
        u0 = (alt->psi - psi_hat).cwiseQuotient(se);
        warm = alt->omega_hat;
    }
    const OptimResult r = bfgs_minimize(obj, u0, opts.outer, &H0inv);

    FitResult fit;
    if (!have_best) fail(ErrorKind::non_convergence, "adjusted profile likelihood could not be evaluated");
    const VectorXd psi_t = to_psi(r.x);
    AdjustedEval at = (best.restricted.psi - psi_t).cwiseAbs().maxCoeff() == 0.0 ? best : eval_at(psi_t, warm);
    fit = at.restricted;
    fit.psi = psi_t;
    fit.adjusted_loglik = at.value;
    fit.iterations = r.iterations;
    fit.gradient_norm = r.grad.size() ? r.grad.cwiseAbs().maxCoeff() : 0.0;
    fit.converged = r.converged && at.restricted.converged;
    fit.message = r.message.empty() ? (fit.converged ? "converged" : at.restricted.message) : r.message;
    return fit;
}

}  // namespace mlmtest
