#include "mlmtest/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "mlmtest/errors.hpp"

namespace mlmtest {

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();

struct Probe {
    double f = inf;
    VectorXd g;
    bool ok = false;
};

Probe probe(const Objective& f, const VectorXd& x, int& evals) {
    Probe p;
    ++evals;
    try {
        p.g.resize(x.size());
        p.f = f(x, &p.g);
        p.ok = std::isfinite(p.f) && p.g.allFinite();
    } catch (const Error&) {
        p.ok = false;
    }
    if (!p.ok) p.f = inf;
    return p;
}

Probe probe_value(const Objective& f, const VectorXd& x, int& evals) {
    Probe p;
    ++evals;
    try {
        p.f = f(x, nullptr);
        p.ok = std::isfinite(p.f);
    } catch (const Error&) {
        p.ok = false;
    }
    if (!p.ok) p.f = inf;
    return p;
}

}  // namespace

OptimResult bfgs_minimize(const Objective& f, const VectorXd& x0, const OptimOptions& opt,
                          const MatrixXd* inv_hessian0) {
    OptimResult res;
    const auto n = x0.size();
    VectorXd x = x0;
    Probe cur = probe(f, x, res.evaluations);
    if (!cur.ok) {
        res.x = x;
        res.f = inf;
        res.grad = VectorXd::Constant(n, inf);
        res.message = "objective not finite at the starting point";
        return res;
    }
    MatrixXd H = inv_hessian0 ? *inv_hessian0 : MatrixXd::Identity(n, n);
    bool scaled = inv_hessian0 != nullptr;
    double last_change = inf;
    int stalled = 0;  // consecutive steps with negligible change but a large gradient

    for (int it = 0; it < opt.max_iter; ++it) {
        res.iterations = it;
        const double gmax = cur.g.cwiseAbs().maxCoeff();
        const bool small = change_small(opt, last_change, cur.f);
        if (gmax < opt.g_tol && small) {
            res.converged = true;
            break;
        }
        stalled = small ? stalled + 1 : 0;
        if (stalled >= 25) {
            res.message = "objective change below tolerance while the gradient is not";
            break;
        }
        VectorXd d = -H * cur.g;
        double slope = d.dot(cur.g);
        if (!(slope < 0.0)) {
            H.setIdentity();
            scaled = false;
            d = -cur.g;
            slope = d.dot(cur.g);
        }
        const double dmax = d.cwiseAbs().maxCoeff();
        if (dmax > opt.max_step) {
            d *= opt.max_step / dmax;
            slope = d.dot(cur.g);
        }

        // backtracking Armijo search
        double alpha = 1.0;
        Probe next;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            next = opt.value_only_line_search ? probe_value(f, x + alpha * d, res.evaluations)
                                              : probe(f, x + alpha * d, res.evaluations);
            if (next.ok && next.f <= cur.f + 1e-4 * alpha * slope) {
                if (opt.value_only_line_search) {
                    next = probe(f, x + alpha * d, res.evaluations);
                    if (!next.ok) break;
                }
                accepted = true;
                break;
            }
            alpha *= (next.ok ? 0.5 : 0.2);
        }
        if (!accepted) {
            // no decrease possible along d: accept current point if it meets the
            // gradient criterion (change is then below round-off)
            if (gmax < opt.g_tol) {
                res.converged = true;
                res.message = "line search stalled at a stationary point";
            } else if (scaled) {
                H.setIdentity();
                scaled = false;
                continue;
            } else {
                res.message = "line search failed";
            }
            break;
        }
        const VectorXd s = alpha * d;
        const VectorXd yv = next.g - cur.g;
        last_change = std::abs(next.f - cur.f);
        x += s;
        cur = std::move(next);

        const double sy = s.dot(yv);
        if (sy > 1e-12 * s.norm() * yv.norm()) {
            if (!scaled) {
                H = MatrixXd::Identity(n, n) * (sy / yv.squaredNorm());
                scaled = true;
            }
            const double rho = 1.0 / sy;
            const VectorXd Hy = H * yv;
            H += ((sy + yv.dot(Hy)) * rho * rho) * (s * s.transpose()) - rho * (Hy * s.transpose() + s * Hy.transpose());
        }
        res.iterations = it + 1;
    }
    if (!res.converged && res.message.empty()) {
        const double gmax = cur.g.cwiseAbs().maxCoeff();
        if (gmax < opt.g_tol && change_small(opt, last_change, cur.f)) {
            res.converged = true;
        } else {
            res.message = "iteration limit reached";
        }
    }
    res.x = x;
    res.f = cur.f;
    res.grad = cur.g;
    return res;
}

OptimResult nelder_mead_minimize(const std::function<double(const VectorXd&)>& f, const VectorXd& x0,
                                 double step, int max_iter, double f_tol) {
    const auto n = x0.size();
    auto eval = [&](const VectorXd& x) {
        try {
            const double v = f(x);
            return std::isfinite(v) ? v : inf;
        } catch (const Error&) {
            return inf;
        }
    };
    std::vector<VectorXd> pts(n + 1, x0);
    std::vector<double> vals(n + 1);
    for (Eigen::Index i = 0; i < n; ++i) pts[i + 1](i) += step;
    for (Eigen::Index i = 0; i <= n; ++i) vals[i] = eval(pts[i]);

    OptimResult res;
    res.evaluations = static_cast<int>(n + 1);
    std::vector<int> idx(n + 1);
    for (int it = 0; it < max_iter; ++it) {
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](int a, int b) { return vals[a] < vals[b]; });
        const int best = idx.front(), worst = idx.back(), second = idx[n - 1];
        res.iterations = it;
        if (std::isfinite(vals[worst]) && std::abs(vals[worst] - vals[best]) <= f_tol * std::max(1.0, std::abs(vals[best]))) {
            res.converged = true;
            break;
        }
        VectorXd centroid = VectorXd::Zero(n);
        for (int k = 0; k < n; ++k) centroid += pts[idx[k]];
        centroid /= static_cast<double>(n);

        const VectorXd xr = centroid + (centroid - pts[worst]);
        const double fr = eval(xr);
        ++res.evaluations;
        if (fr < vals[best]) {
            const VectorXd xe = centroid + 2.0 * (centroid - pts[worst]);
            const double fe = eval(xe);
            ++res.evaluations;
            if (fe < fr) { pts[worst] = xe; vals[worst] = fe; }
            else { pts[worst] = xr; vals[worst] = fr; }
        } else if (fr < vals[second]) {
            pts[worst] = xr;
            vals[worst] = fr;
        } else {
            const bool outside = fr < vals[worst];
            const VectorXd xc = outside ? VectorXd(centroid + 0.5 * (xr - centroid))
                                        : VectorXd(centroid + 0.5 * (pts[worst] - centroid));
            const double fc = eval(xc);
            ++res.evaluations;
            if (fc < std::min(fr, vals[worst])) {
                pts[worst] = xc;
                vals[worst] = fc;
            } else {
                for (int k = 1; k <= n; ++k) {
                    pts[idx[k]] = pts[best] + 0.5 * (pts[idx[k]] - pts[best]);
                    vals[idx[k]] = eval(pts[idx[k]]);
                    ++res.evaluations;
                }
            }
        }
    }
    const auto best = std::min_element(vals.begin(), vals.end()) - vals.begin();
    res.x = pts[best];
    res.f = vals[best];
    if (!res.converged) res.message = "simplex iteration limit reached";
    return res;
}

}  // namespace mlmtest
