#include "cumulants.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "mlmtest/covariance.hpp"
#include "mlmtest/errors.hpp"

namespace mlmtest {

namespace {

// Truncated multilinear number a_0 + sum_S a_S prod_{i in S} e_i with
// e_i^2 = 0, over four infinitesimals.
struct Hyper {
    std::array<double, 16> a{};

    Hyper() = default;
    Hyper(double v) { a[0] = v; }  // NOLINT(google-explicit-constructor)
};

Hyper operator+(const Hyper& x, const Hyper& y) {
    Hyper r;
    for (int m = 0; m < 16; ++m) r.a[m] = x.a[m] + y.a[m];
    return r;
}
Hyper operator-(const Hyper& x, const Hyper& y) {
    Hyper r;
    for (int m = 0; m < 16; ++m) r.a[m] = x.a[m] - y.a[m];
    return r;
}
Hyper operator*(const Hyper& x, double c) {
    Hyper r;
    for (int m = 0; m < 16; ++m) r.a[m] = x.a[m] * c;
    return r;
}
Hyper operator*(double c, const Hyper& x) { return x * c; }
Hyper operator*(const Hyper& x, const Hyper& y) {
    Hyper r;
    for (int m = 0; m < 16; ++m) {
        double v = 0.0;
        for (int s = m;; s = (s - 1) & m) {
            v += x.a[s] * y.a[m ^ s];
            if (s == 0) break;
        }
        r.a[m] = v;
    }
    return r;
}
Hyper inverse(const Hyper& x) {
    Hyper r;
    r.a[0] = 1.0 / x.a[0];
    for (int m = 1; m < 16; ++m) {
        double v = 0.0;
        for (int s = m; s != 0; s = (s - 1) & m) v += x.a[s] * r.a[m ^ s];
        r.a[m] = -v * r.a[0];
    }
    return r;
}
Hyper log(const Hyper& x) {
    Hyper n = x * (1.0 / x.a[0]);
    n.a[0] = 0.0;
    Hyper r = n, pw = n;
    for (int k = 2; k <= 4; ++k) {
        pw = pw * n;
        r = r + pw * ((k % 2 == 0 ? -1.0 : 1.0) / k);
    }
    r.a[0] = std::log(x.a[0]);
    return r;
}

struct HMat {
    int r = 0, c = 0;
    std::vector<Hyper> v;
    HMat() = default;
    HMat(int rows, int cols) : r(rows), c(cols), v(static_cast<size_t>(rows) * cols) {}
    Hyper& operator()(int i, int j) { return v[static_cast<size_t>(i) * c + j]; }
    const Hyper& operator()(int i, int j) const { return v[static_cast<size_t>(i) * c + j]; }
};

HMat constant(const MatrixXd& m) {
    HMat h(static_cast<int>(m.rows()), static_cast<int>(m.cols()));
    for (int i = 0; i < h.r; ++i)
        for (int j = 0; j < h.c; ++j) h(i, j) = Hyper(m(i, j));
    return h;
}

HMat mul(const HMat& x, const HMat& y) {
    HMat out(x.r, y.c);
    for (int i = 0; i < x.r; ++i)
        for (int k = 0; k < x.c; ++k) {
            const Hyper& xi = x(i, k);
            for (int j = 0; j < y.c; ++j) out(i, j) = out(i, j) + xi * y(k, j);
        }
    return out;
}

HMat transpose(const HMat& x) {
    HMat out(x.c, x.r);
    for (int i = 0; i < x.r; ++i)
        for (int j = 0; j < x.c; ++j) out(j, i) = x(i, j);
    return out;
}

// Gauss-Jordan on a matrix whose real part is SPD (no pivoting needed).
HMat inverse_logdet(HMat a, Hyper* logdet) {
    const int n = a.r;
    HMat inv(n, n);
    for (int i = 0; i < n; ++i) inv(i, i) = Hyper(1.0);
    Hyper ld(0.0);
    for (int k = 0; k < n; ++k) {
        const Hyper piv = a(k, k);
        if (!(piv.a[0] > 0.0)) fail(ErrorKind::not_positive_definite, "cumulant oracle: matrix not positive definite");
        ld = ld + log(piv);
        const Hyper ip = inverse(piv);
        for (int j = 0; j < n; ++j) {
            a(k, j) = a(k, j) * ip;
            inv(k, j) = inv(k, j) * ip;
        }
        for (int i = 0; i < n; ++i) {
            if (i == k) continue;
            const Hyper f = a(i, k);
            for (int j = 0; j < n; ++j) {
                a(i, j) = a(i, j) - f * a(k, j);
                inv(i, j) = inv(i, j) - f * inv(k, j);
            }
        }
    }
    if (logdet) *logdet = ld;
    return inv;
}

class ExpectedLoglik {
public:
    ExpectedLoglik(const Design& d, VectorXd theta) : d_(d), theta_(std::move(theta)) {
        for (int i = 0; i < d.N(); ++i) {
            Xp_.push_back(constant(d.Xp(i)));
            Xt_.push_back(constant(MatrixXd(d.Xt(i))));
        }
    }

    // lambda(theta + dprime, theta + dtrue)
    Hyper operator()(const std::vector<Hyper>& dprime, const std::vector<Hyper>& dtrue) const {
        const int dim = static_cast<int>(theta_.size());
        std::vector<Hyper> tp(dim), tt(dim);
        for (int r = 0; r < dim; ++r) {
            tp[r] = Hyper(theta_(r)) + dprime[r];
            tt[r] = Hyper(theta_(r)) + dtrue[r];
        }
        std::vector<HMat> Sp, Spinv, S, Sinv;
        std::vector<Hyper> ldp;
        const Side side_p = side(tp, &Sp, &Spinv, &ldp);
        std::vector<Hyper> ld_unused;
        const Side side_t = side(tt, &S, &Sinv, &ld_unused);
        Hyper lam(0.0);
        for (int i = 0; i < d_.N(); ++i) {
            const int tau = d_.tau[i];
            Hyper tr(0.0);
            for (int a = 0; a < tau; ++a)
                for (int b = 0; b < tau; ++b) tr = tr + Spinv[i](a, b) * S[i](b, a);
            std::vector<Hyper> diff(tau);
            for (int a = 0; a < tau; ++a) diff[a] = side_t.mu[i](a, 0) - side_p.mu[i](a, 0);
            Hyper quad(0.0);
            for (int a = 0; a < tau; ++a)
                for (int b = 0; b < tau; ++b) quad = quad + diff[a] * Spinv[i](a, b) * diff[b];
            lam = lam - 0.5 * ldp[i] - 0.5 * tr - 0.5 * quad;
        }
        return lam;
    }

private:
    struct Side {
        std::vector<HMat> mu;
    };

    Side side(const std::vector<Hyper>& th, std::vector<HMat>* S, std::vector<HMat>* Sinv,
              std::vector<Hyper>* ld) const {
        const int p = d_.p, nu = d_.nuisance(), N = d_.N();
        const int off = p + nu;
        std::vector<Hyper> omega(th.begin() + off, th.end());
        S->resize(N);
        Sinv->resize(N);
        ld->resize(N);
        for (int i = 0; i < N; ++i) {
            const int tau = d_.tau[i];
            HMat s(tau, tau);
            unit_sigma_generic<Hyper>(d_.family, d_.Z[i], omega.data(), s.v.data());
            (*Sinv)[i] = inverse_logdet(s, &(*ld)[i]);
            (*S)[i] = std::move(s);
        }
        // Xp' = Xp - Xt A^-1 Xt' Sigma^-1 Xp
        HMat Pi(nu, p);
        if (nu > 0) {
            HMat A(nu, nu), B(nu, p);
            for (int i = 0; i < N; ++i) {
                const HMat XtV = mul(transpose(Xt_[i]), (*Sinv)[i]);
                const HMat a = mul(XtV, Xt_[i]);
                const HMat b = mul(XtV, Xp_[i]);
                for (size_t k = 0; k < A.v.size(); ++k) A.v[k] = A.v[k] + a.v[k];
                for (size_t k = 0; k < B.v.size(); ++k) B.v[k] = B.v[k] + b.v[k];
            }
            Pi = mul(inverse_logdet(A, nullptr), B);
        }
        Side out;
        out.mu.resize(N);
        HMat psi(p, 1), xi(nu, 1);
        for (int a = 0; a < p; ++a) psi(a, 0) = th[a];
        for (int a = 0; a < nu; ++a) xi(a, 0) = th[p + a];
        for (int i = 0; i < N; ++i) {
            HMat xpp = Xp_[i];
            if (nu > 0) {
                const HMat corr = mul(Xt_[i], Pi);
                for (size_t k = 0; k < xpp.v.size(); ++k) xpp.v[k] = xpp.v[k] - corr.v[k];
            }
            HMat mu = mul(xpp, psi);
            if (nu > 0) {
                const HMat m2 = mul(Xt_[i], xi);
                for (size_t k = 0; k < mu.v.size(); ++k) mu.v[k] = mu.v[k] + m2.v[k];
            }
            out.mu[i] = std::move(mu);
        }
        return out;
    }

    const Design& d_;
    VectorXd theta_;
    std::vector<HMat> Xp_, Xt_;
};

// Infinitesimal e_k (k = 0..3) as a hyper number.
Hyper eps(int k) {
    Hyper h;
    h.a[1 << k] = 1.0;
    return h;
}

}  // namespace

CumulantTensors exact_cumulants(const Design& design, const VectorXd& psi, const VectorXd& xi,
                                const VectorXd& omega) {
    const int d = design.n + design.family.dim();
    if (d > max_oracle_dim) {
        fail(ErrorKind::instance_too_large, "cumulant oracle supports at most " + std::to_string(max_oracle_dim) +
                                                " parameters, instance has " + std::to_string(d));
    }
    if (psi.size() != design.p || xi.size() != design.nuisance() || omega.size() != design.family.dim()) {
        throw std::invalid_argument("exact_cumulants: parameter blocks have the wrong length");
    }
    VectorXd theta(d);
    theta << psi, xi, omega;
    const ExpectedLoglik lam(design, theta);

    CumulantTensors c;
    c.d = d;
    c.p = design.p;
    const size_t d2 = static_cast<size_t>(d) * d, d3 = d2 * d, d4 = d3 * d;
    c.k2.assign(d2, 0.0);
    c.k3.assign(d3, 0.0);
    c.k2_t.assign(d3, 0.0);
    c.k4.assign(d4, 0.0);
    c.k2_tu.assign(d4, 0.0);
    c.k3_u.assign(d4, 0.0);

    // prime[k] / both[k]: which parameter infinitesimal k moves in theta' only
    // or in theta' and theta together (-1: unused)
    auto run = [&](std::array<int, 4> prime, std::array<int, 4> both) {
        std::vector<Hyper> dp(d, Hyper(0.0)), dt(d, Hyper(0.0));
        int mask = 0;
        for (int k = 0; k < 4; ++k) {
            if (prime[k] >= 0) {
                dp[prime[k]] = dp[prime[k]] + eps(k);
                mask |= 1 << k;
            }
            if (both[k] >= 0) {
                dp[both[k]] = dp[both[k]] + eps(k);
                dt[both[k]] = dt[both[k]] + eps(k);
                mask |= 1 << k;
            }
        }
        return lam(dp, dt).a[mask];
    };
    auto at2 = [&](int r, int s) { return static_cast<size_t>(r) * d + s; };
    auto at3 = [&](int r, int s, int t) { return at2(r, s) * d + t; };
    auto at4 = [&](int r, int s, int t, int u) { return at3(r, s, t) * d + u; };

    for (int r = 0; r < d; ++r) {
        for (int s = r; s < d; ++s) {
            const double v = run({r, s, -1, -1}, {-1, -1, -1, -1});
            c.k2[at2(r, s)] = c.k2[at2(s, r)] = v;
            for (int t = 0; t < d; ++t) {
                const double w = run({r, s, -1, -1}, {-1, -1, t, -1});
                c.k2_t[at3(r, s, t)] = c.k2_t[at3(s, r, t)] = w;
                for (int u = t; u < d; ++u) {
                    const double x = run({r, s, -1, -1}, {-1, -1, t, u});
                    for (auto [a, b] : {std::pair{r, s}, std::pair{s, r}})
                        for (auto [e, f] : {std::pair{t, u}, std::pair{u, t}}) c.k2_tu[at4(a, b, e, f)] = x;
                }
            }
            for (int t = s; t < d; ++t) {
                const int perm[6][3] = {{r, s, t}, {r, t, s}, {s, r, t}, {s, t, r}, {t, r, s}, {t, s, r}};
                const double v3 = run({r, s, t, -1}, {-1, -1, -1, -1});
                for (const auto& q : perm) c.k3[at3(q[0], q[1], q[2])] = v3;
                for (int u = 0; u < d; ++u) {
                    const double w = run({r, s, t, -1}, {-1, -1, -1, u});
                    for (const auto& q : perm) c.k3_u[at4(q[0], q[1], q[2], u)] = w;
                }
                for (int u = t; u < d; ++u) {
                    const double v4 = run({r, s, t, u}, {-1, -1, -1, -1});
                    // all permutations of (r, s, t, u)
                    std::array<int, 4> idx{r, s, t, u};
                    std::sort(idx.begin(), idx.end());
                    do {
                        c.k4[at4(idx[0], idx[1], idx[2], idx[3])] = v4;
                    } while (std::next_permutation(idx.begin(), idx.end()));
                }
            }
        }
    }
    return c;
}

namespace {

struct Sub {
    const CumulantTensors& c;
    std::vector<int> idx;
    MatrixXd ki;  // inverse of the kappa_rs block over idx
};

Sub restrict_to(const CumulantTensors& c, std::vector<int> idx) {
    const int m = static_cast<int>(idx.size());
    MatrixXd k(m, m);
    for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b) k(a, b) = c.K2(idx[a], idx[b]);
    Eigen::FullPivLU<MatrixXd> lu(k);
    if (!lu.isInvertible()) fail(ErrorKind::singular_information, "cumulant oracle: information block is singular");
    return {c, std::move(idx), lu.inverse()};
}

// l_rstu - l_rstuvw summed over the indices of the block
double lawley_block(const Sub& b) {
    const auto& c = b.c;
    const int m = static_cast<int>(b.idx.size());
    const auto& I = b.idx;
    const MatrixXd& ki = b.ki;
    double l4 = 0.0;
    for (int r = 0; r < m; ++r)
        for (int s = 0; s < m; ++s)
            for (int t = 0; t < m; ++t)
                for (int u = 0; u < m; ++u) {
                    const int R = I[r], S = I[s], T = I[t], U = I[u];
                    l4 += ki(r, s) * ki(t, u) *
                          (0.25 * c.K4(R, S, T, U) - c.K3u(R, S, T, U) - c.K2tu(R, T, S, U));
                }
    double l6 = 0.0;
    for (int r = 0; r < m; ++r)
        for (int s = 0; s < m; ++s) {
            const double krs = ki(r, s);
            if (krs == 0.0) continue;
            for (int t = 0; t < m; ++t)
                for (int u = 0; u < m; ++u) {
                    const double ktu = krs * ki(t, u);
                    if (ktu == 0.0) continue;
                    for (int v = 0; v < m; ++v)
                        for (int w = 0; w < m; ++w) {
                            const int R = I[r], S = I[s], T = I[t], U = I[u], V = I[v], W = I[w];
                            const double term =
                                c.K3(R, T, V) * (c.K3(S, U, W) / 6.0 - c.K2t(S, W, U)) +
                                c.K3(R, T, U) * (c.K3(S, V, W) / 4.0 - c.K2t(S, W, V)) +
                                c.K2t(R, T, V) * c.K2t(S, W, U) + c.K2t(R, T, U) * c.K2t(S, W, V);
                            l6 += ktu * ki(v, w) * term;
                        }
                }
        }
    return l4 - l6;
}

}  // namespace

double lawley_oracle(const CumulantTensors& cum) {
    if (cum.d > max_oracle_dim) fail(ErrorKind::instance_too_large, "cumulant oracle: instance too large");
    std::vector<int> full(cum.d), nuis;
    for (int r = 0; r < cum.d; ++r) {
        full[r] = r;
        if (r >= cum.p) nuis.push_back(r);
    }
    return lawley_block(restrict_to(cum, full)) - lawley_block(restrict_to(cum, nuis));
}

double dicicco_stern_oracle(const CumulantTensors& c) {
    if (c.d > max_oracle_dim) fail(ErrorKind::instance_too_large, "cumulant oracle: instance too large");
    const int d = c.d, p = c.p;
    std::vector<int> full(d);
    for (int r = 0; r < d; ++r) full[r] = r;
    const MatrixXd ki = restrict_to(c, full).ki;
    const MatrixXd sig = ki.topLeftCorner(p, p).inverse();
    const MatrixXd tau = ki.leftCols(p) * sig.transpose() * ki.leftCols(p).transpose();
    const MatrixXd nu = ki - tau;

    double s = 0.0;
    for (int r = 0; r < d; ++r)
        for (int st = 0; st < d * d; ++st) {
            const int S = st / d, T = st % d;
            for (int u = 0; u < d; ++u) {
                s += 0.25 * tau(r, u) * tau(S, T) * c.K4(r, S, T, u);
                s -= ki(r, u) * tau(S, T) * c.K3u(r, S, T, u);
                s += (ki(r, u) * ki(S, T) - nu(r, u) * nu(S, T)) * c.K2tu(r, S, T, u);
            }
        }
    for (int r = 0; r < d; ++r)
        for (int S = 0; S < d; ++S)
            for (int T = 0; T < d; ++T)
                for (int u = 0; u < d; ++u)
                    for (int v = 0; v < d; ++v)
                        for (int w = 0; w < d; ++w) {
                            const double k3rst = c.K3(r, S, T);
                            const double k3uvw = c.K3(u, v, w);
                            const double k2t_rst = c.K2t(r, S, T);
                            const double k2t_uvw = c.K2t(u, v, w);
                            // (r u)(s t)(v w) and (r u)(s w)(t v) pairings
                            const double a_st_vw = ki(r, u) * tau(S, T) * tau(v, w);
                            const double a_sw_tv = ki(r, u) * tau(S, w) * tau(T, v);
                            const double t_sw_tv = tau(r, u) * tau(S, w) * tau(T, v);
                            s -= (0.25 * a_st_vw + 0.5 * a_sw_tv - t_sw_tv / 3.0) * k3rst * k3uvw;
                            s += (ki(r, u) * tau(S, T) * ki(v, w) + ki(r, u) * ki(S, w) * ki(T, v) -
                                  nu(r, u) * ki(S, w) * nu(T, v)) * k3rst * k2t_uvw;
                            s -= (ki(r, u) * ki(S, T) * ki(v, w) - nu(r, u) * nu(S, T) * nu(v, w)) * k2t_rst * k2t_uvw;
                            s -= (ki(r, u) * ki(S, w) * ki(T, v) - nu(r, u) * nu(S, w) * nu(T, v)) * k2t_rst * k2t_uvw;
                        }
    return s;
}

}  // namespace mlmtest
