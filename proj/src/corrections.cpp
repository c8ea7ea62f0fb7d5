#include "mlmtest/corrections.hpp"

#include <cmath>

#include "mlmtest/errors.hpp"

namespace mlmtest {

namespace {

double tr_prod(const MatrixXd& a, const MatrixXd& b) { return a.cwiseProduct(b.transpose()).sum(); }

MatrixXd checked_inverse(const MatrixXd& a, const char* what) {
    if (a.rows() == 0) return a;
    Eigen::FullPivLU<MatrixXd> lu(a);
    if (!lu.isInvertible() || lu.rcond() < 1e-14) fail(ErrorKind::singular_information, what);
    return lu.inverse();
}

}  // namespace

const char* path_name(CorrectionPath path) {
    switch (path) {
        case CorrectionPath::automatic: return "automatic";
        case CorrectionPath::null_at_zero: return "null-at-zero";
        case CorrectionPath::linear: return "linear";
        case CorrectionPath::general: return "general";
    }
    return "automatic";
}

const char* variant_name(TraceVariant v) { return v == TraceVariant::exact ? "exact" : "printed"; }

CorrectionPath parse_path(const std::string& s) {
    if (s == "automatic") return CorrectionPath::automatic;
    if (s == "null-at-zero") return CorrectionPath::null_at_zero;
    if (s == "linear") return CorrectionPath::linear;
    if (s == "general") return CorrectionPath::general;
    fail(ErrorKind::invalid_config, "unknown correction path '" + s + "'");
}

TraceVariant parse_variant(const std::string& s) {
    if (s == "exact") return TraceVariant::exact;
    if (s == "printed") return TraceVariant::printed;
    fail(ErrorKind::invalid_config, "unknown correction variant '" + s + "'");
}

CorrectionIngredients ingredients(const Design& d, const SigmaBundle& bundle, const OrthogonalizedDesign& o,
                                  const VectorXd& psi0) {
    if (!bundle.has_inverse_derivatives || bundle.order < 2 || !o.has_second) {
        throw std::invalid_argument("ingredients: bundle and orthogonalized design need second derivatives");
    }
    if (psi0.size() != d.p) throw std::invalid_argument("ingredients: psi0 has the wrong length");
    const int N = d.N(), p = d.p, nu = d.nuisance(), dim = bundle.dim();
    const bool linear = bundle.family.is_linear();
    CorrectionIngredients g;
    g.p = p;
    g.nu = nu;
    g.dim = dim;
    g.linear = linear;
    g.psi0 = psi0;
    g.omega = bundle.omega;

    g.D = MatrixXd::Zero(dim, dim);
    g.W = MatrixXd::Zero(p, p);
    std::vector<MatrixXd> Apsi(dim, MatrixXd::Zero(p, p));
    std::vector<MatrixXd> Mraw(static_cast<size_t>(dim) * dim, MatrixXd::Zero(p, p));
    g.A_j.assign(dim, MatrixXd::Zero(dim, dim));
    g.C_j.assign(dim, MatrixXd::Zero(dim, dim));

    // psi-dependent sums
    const size_t d2 = static_cast<size_t>(dim) * dim;
    MatrixXd Kww_mean = MatrixXd::Zero(dim, dim);      // sum udot_j' V udot_k
    g.K_xiomega = MatrixXd::Zero(nu, dim);
    g.B_j.assign(dim, MatrixXd::Zero(nu, dim));
    g.F_j.assign(dim, MatrixXd::Zero(nu, dim));
    std::vector<VectorXd> T1(d2, VectorXd::Zero(dim));   // [lo](j): uddot_lo' V udot_j
    std::vector<VectorXd> T2(dim, VectorXd::Zero(d2));   // [j](lo): udot_l' dSigma^j udot_o
    std::vector<VectorXd> X1(d2, VectorXd::Zero(nu));    // [lo]: Xt' ddSigma^lo u

    std::vector<MatrixXd> E(d2), Fm(dim);
    std::vector<VectorXd> ud(dim), udd(d2);
    for (int i = 0; i < N; ++i) {
        const auto& u = bundle.units[i];
        const MatrixXd& Xpp = o.Xp_prime[i];
        const auto Xt = d.Xt(i);
        g.W.noalias() += Xpp.transpose() * u.inv * Xpp;
        for (int j = 0; j < dim; ++j) {
            Apsi[j].noalias() += Xpp.transpose() * u.d1inv[j] * Xpp;
            Fm[j] = u.inv * u.d1[j];
            for (int k = 0; k < dim; ++k) {
                g.D(j, k) += 0.5 * u.d1inv[j].cwiseProduct(u.d1[k]).sum();
                const size_t jk = static_cast<size_t>(j) * dim + k;
                Mraw[jk].noalias() += Xpp.transpose() * u.d2inv[jk] * Xpp +
                                      2.0 * o.Xdot[i][k].transpose() * u.d1inv[j] * Xpp;
                E[jk] = u.d1inv[k] * u.d1[j];  // dSigma^k dSigma_j
            }
        }
        for (int j = 0; j < dim; ++j)
            for (int k = 0; k < dim; ++k)
                for (int l = 0; l < dim; ++l) {
                    double a = 0.0, c = -tr_prod(E[static_cast<size_t>(j) * dim + k], Fm[l]);
                    if (!linear) {
                        a = 0.5 * u.d1inv[l].cwiseProduct(u.d2[static_cast<size_t>(j) * dim + k]).sum() -
                            0.5 * u.d1inv[k].cwiseProduct(u.d2[static_cast<size_t>(j) * dim + l]).sum() -
                            0.5 * u.d1inv[j].cwiseProduct(u.d2[static_cast<size_t>(l) * dim + k]).sum();
                        c += 0.5 * u.d1inv[j].cwiseProduct(u.d2[static_cast<size_t>(k) * dim + l]).sum() +
                             0.5 * u.d1inv[k].cwiseProduct(u.d2[static_cast<size_t>(j) * dim + l]).sum();
                    }
                    g.A_j[j](k, l) += a;
                    g.C_j[j](k, l) += c;
                }

        const VectorXd ui = Xpp * psi0;
        for (int j = 0; j < dim; ++j) ud[j] = o.Xdot[i][j] * psi0;
        for (size_t jk = 0; jk < d2; ++jk) udd[jk] = o.Xddot[i][jk] * psi0;
        for (int j = 0; j < dim; ++j) {
            const VectorXd vud = u.inv * ud[j];
            for (int k = 0; k < dim; ++k) Kww_mean(j, k) += ud[k].dot(vud);
            for (size_t lo = 0; lo < d2; ++lo) T1[lo](j) += udd[lo].dot(vud);
            for (int l = 0; l < dim; ++l) {
                const VectorXd dl = u.d1inv[j] * ud[l];
                for (int oo = 0; oo < dim; ++oo) T2[j](static_cast<size_t>(l) * dim + oo) += ud[oo].dot(dl);
                if (nu > 0) {
                    g.B_j[j].col(l) += Xt.transpose() * dl;
                    g.F_j[j].col(l) += Xt.transpose() * (u.d2inv[static_cast<size_t>(j) * dim + l] * ui + dl);
                }
            }
            if (nu > 0) g.K_xiomega.col(j) += Xt.transpose() * (u.d1inv[j] * ui);
        }
        if (nu > 0)
            for (size_t lo = 0; lo < d2; ++lo) X1[lo] += Xt.transpose() * (u.d2inv[lo] * ui);
    }

    const MatrixXd Winv = checked_inverse(g.W, "interest information is singular");
    g.M = MatrixXd::Zero(dim, dim);
    g.P = MatrixXd::Zero(dim, dim);
    g.tau = VectorXd::Zero(dim);
    g.nu_vec = VectorXd::Zero(dim);
    for (int j = 0; j < dim; ++j) {
        g.tau(j) = tr_prod(Winv, Apsi[j]);
        if (nu > 0) g.nu_vec(j) = tr_prod(o.A_inv, o.R[j]);
        for (int k = 0; k < dim; ++k) {
            g.M(j, k) = tr_prod(Winv, Mraw[static_cast<size_t>(j) * dim + k]);
            g.P(j, k) = tr_prod(Apsi[j] * Winv, Apsi[k] * Winv);
        }
    }
    const MatrixXd Dinv = checked_inverse(g.D, "omega information D is singular");
    g.gamma = VectorXd::Zero(dim);
    g.gamma_star = VectorXd::Zero(dim);
    for (int j = 0; j < dim; ++j) {
        g.gamma(j) = tr_prod(Dinv, g.A_j[j]);
        g.gamma_star(j) = tr_prod(Dinv, g.C_j[j]);
    }

    // expected information and the blocks of its inverse
    g.K_psipsi = -g.W;
    g.K_xixi = -o.A;
    g.K_omegaomega = g.D - Kww_mean;
    g.Kinv_psipsi = -Winv;
    if (nu > 0) {
        g.Kinv_omegaomega = checked_inverse(g.K_omegaomega + g.K_xiomega.transpose() * o.A_inv * g.K_xiomega,
                                            "omega information is singular");
        const MatrixXd Kww_inv = checked_inverse(g.K_omegaomega, "omega information is singular");
        g.Kinv_xixi = checked_inverse(g.K_xixi - g.K_xiomega * Kww_inv * g.K_xiomega.transpose(),
                                      "nuisance information is singular");
        g.Kinv_xiomega = o.A_inv * g.K_xiomega * g.Kinv_omegaomega;
    } else {
        g.Kinv_omegaomega = checked_inverse(g.K_omegaomega, "omega information is singular");
        g.Kinv_xixi = MatrixXd(0, 0);
        g.Kinv_xiomega = MatrixXd(0, dim);
    }

    const MatrixXd& Kww = g.Kinv_omegaomega;
    g.rho = VectorXd::Zero(dim);
    g.delta = VectorXd::Zero(dim);
    g.eta = VectorXd::Zero(dim);
    g.rho_star = VectorXd::Zero(dim);
    g.delta_star = VectorXd::Zero(dim);
    for (int j = 0; j < dim; ++j) {
        g.rho(j) = tr_prod(Kww, g.A_j[j]);
        g.rho_star(j) = tr_prod(Kww, g.C_j[j]);
        if (nu > 0) {
            g.eta(j) = -tr_prod(g.Kinv_xixi, o.R[j]);
            g.delta(j) = g.Kinv_xiomega.cwiseProduct(g.B_j[j]).sum();
            g.delta_star(j) = g.Kinv_xiomega.cwiseProduct(g.F_j[j]).sum();
        }
    }
    g.G_f.assign(nu, MatrixXd::Zero(nu, dim));
    g.eta_star = VectorXd::Zero(nu);
    for (int f = 0; f < nu; ++f) {
        for (int j = 0; j < dim; ++j) g.G_f[f].col(j) = -o.R[j].col(f);
        g.eta_star(f) = g.Kinv_xiomega.cwiseProduct(g.G_f[f]).sum();
    }

    g.lr_mean_omega = VectorXd::Zero(dim);
    g.cr_mean_omega = VectorXd::Zero(dim);
    g.lr_xi = VectorXd::Zero(nu);
    g.cr_xi = VectorXd::Zero(nu);
    for (int l = 0; l < dim; ++l) {
        for (int oo = 0; oo < dim; ++oo) {
            const double k = Kww(l, oo);
            const size_t lo = static_cast<size_t>(l) * dim + oo;
            for (int j = 0; j < dim; ++j) {
                g.lr_mean_omega(j) += k * (0.5 * T1[lo](j) - 0.5 * T2[j](lo));
                g.cr_mean_omega(j) -= k * (T1[static_cast<size_t>(j) * dim + oo](l) +
                                           T2[oo](static_cast<size_t>(j) * dim + l) + T1[lo](j));
            }
            if (nu > 0) {
                g.lr_xi -= k * (0.5 * X1[lo] + g.B_j[oo].col(l));
                g.cr_xi += k * (X1[lo] + g.B_j[l].col(oo));
            }
        }
    }
    return g;
}

namespace {

CorrectionPath resolve(const CorrectionIngredients& g, CorrectionPath path) {
    if (path != CorrectionPath::automatic) return path;
    return g.psi0.isZero(0.0) ? CorrectionPath::null_at_zero : CorrectionPath::general;
}

// interest-block term: P/2 - tau tau'/4, or the printed P/4
MatrixXd interest_term(const CorrectionIngredients& g, TraceVariant v) {
    if (v == TraceVariant::printed) return 0.25 * g.P;
    return 0.5 * g.P - 0.25 * g.tau * g.tau.transpose();
}

}  // namespace

double bartlett_C(const CorrectionIngredients& g, CorrectionPath path, TraceVariant variant) {
    path = resolve(g, path);
    const MatrixXd base = -0.5 * g.M + interest_term(g, variant);
    if (path == CorrectionPath::general) {
        const MatrixXd& Kww = g.Kinv_omegaomega;
        const VectorXd e = 0.5 * g.rho - g.delta + 0.5 * g.eta + g.lr_mean_omega;
        VectorXd h = Kww * e;
        if (g.nu > 0) h += g.Kinv_xiomega.transpose() * g.lr_xi;
        return tr_prod(Kww, base) - g.tau.dot(h);
    }
    const MatrixXd Dinv = checked_inverse(g.D, "omega information D is singular");
    if (path == CorrectionPath::linear) {
        if (!g.linear) throw std::invalid_argument("bartlett_C: linear path requested for a nonlinear covariance family");
        return tr_prod(Dinv, base) - 0.5 * g.tau.dot(Dinv * g.nu_vec);
    }
    return tr_prod(Dinv, base) - 0.5 * g.tau.dot(Dinv * (g.gamma + g.nu_vec));
}

double bartlett_Cstar(const CorrectionIngredients& g, CorrectionPath path, TraceVariant variant) {
    path = resolve(g, path);
    const MatrixXd base = -g.M + interest_term(g, variant);
    if (path == CorrectionPath::general) {
        const MatrixXd& Kww = g.Kinv_omegaomega;
        const VectorXd gw = g.rho_star + g.delta_star + g.cr_mean_omega;
        VectorXd h = Kww * gw;
        if (g.nu > 0) h += g.Kinv_xiomega.transpose() * (g.eta_star + g.cr_xi);
        return tr_prod(Kww, base) + g.tau.dot(h);
    }
    if (path == CorrectionPath::linear && !g.linear) {
        throw std::invalid_argument("bartlett_Cstar: linear path requested for a nonlinear covariance family");
    }
    const MatrixXd Dinv = checked_inverse(g.D, "omega information D is singular");
    return tr_prod(Dinv, base) + g.tau.dot(Dinv * g.gamma_star);
}

BartlettConstants bartlett_constants(const Design& design, const SigmaBundle& bundle,
                                     const OrthogonalizedDesign& orth, const VectorXd& psi0, CorrectionPath path,
                                     TraceVariant variant) {
    const CorrectionIngredients g = ingredients(design, bundle, orth, psi0);
    BartlettConstants b;
    b.p = design.p;
    b.omega = bundle.omega;
    b.psi0 = psi0;
    b.path = resolve(g, path);
    b.variant = variant;
    b.C = bartlett_C(g, b.path, variant);
    b.C_star = bartlett_Cstar(g, b.path, variant);
    b.C_usable = std::isfinite(b.C) && 1.0 + b.C / b.p > 0.0;
    b.C_star_usable = std::isfinite(b.C_star) && 1.0 + b.C_star / b.p > 0.0;
    return b;
}

BartlettConstants bartlett_constants(const Design& design, const VectorXd& psi0, const VectorXd& omega,
                                     CorrectionPath path, TraceVariant variant) {
    const SigmaBundle bundle = full_bundle(design, omega, 2);
    const OrthogonalizedDesign orth = orthogonalize(design, bundle, true);
    return bartlett_constants(design, bundle, orth, psi0, path, variant);
}

}  // namespace mlmtest
