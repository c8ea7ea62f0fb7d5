#include "mlmtest/numutil.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "mlmtest/errors.hpp"

namespace mlmtest {

SymMatrix::SymMatrix(const MatrixXd& a, double tol) {
    if (a.rows() != a.cols()) {
        throw std::invalid_argument("SymMatrix: matrix is not square");
    }
    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    if ((a - a.transpose()).cwiseAbs().maxCoeff() > tol * scale) {
        throw std::invalid_argument("SymMatrix: matrix is not symmetric");
    }
    m_ = 0.5 * (a + a.transpose());
}

bool try_cholesky(const MatrixXd& a, Eigen::LLT<MatrixXd>& llt) {
    llt.compute(a);
    if (llt.info() != Eigen::Success) return false;
    const auto d = llt.matrixLLT().diagonal();
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        if (!(d(i) > 0.0) || !std::isfinite(d(i))) return false;
    }
    return true;
}

MatrixXd chol_solve(const SymMatrix& a, const MatrixXd& b) {
    if (b.rows() != a.dim()) {
        throw std::invalid_argument("chol_solve: dimension mismatch");
    }
    Eigen::LLT<MatrixXd> llt;
    if (!try_cholesky(a.matrix(), llt)) {
        fail(ErrorKind::not_positive_definite, "matrix is not positive definite");
    }
    return llt.solve(b);
}

ChiSqDist::ChiSqDist(int df_) : df(df_) {
    if (df < 1) throw std::invalid_argument("ChiSqDist: df must be >= 1");
}

GammaPQ incomplete_gamma(double a, double x) {
    if (!(a > 0.0)) throw std::invalid_argument("incomplete_gamma: a must be positive");
    if (x < 0.0 || std::isnan(x)) throw std::invalid_argument("incomplete_gamma: x must be >= 0");
    if (x == 0.0) return {0.0, 1.0};
    if (std::isinf(x)) return {1.0, 0.0};

    const double log_prefix = a * std::log(x) - x - std::lgamma(a);
    constexpr double eps = 1e-16;
    constexpr int max_iter = 10000;

    if (x < a + 1.0) {
        // series: P = e^{-x} x^a / Gamma(a+1) * sum x^k / ((a+1)...(a+k))
        double term = 1.0 / a;
        double sum = term;
        double ap = a;
        for (int k = 0; k < max_iter; ++k) {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if (std::abs(term) < std::abs(sum) * eps) break;
        }
        const double p = std::exp(log_prefix) * sum;
        return {p, 1.0 - p};
    }

    // modified Lentz continued fraction for Q
    const double tiny = std::numeric_limits<double>::min() / eps;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < max_iter; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) break;
    }
    const double q = std::exp(log_prefix) * h;
    return {1.0 - q, q};
}

double chisq_sf(double x, int df) {
    ChiSqDist dist(df);
    if (x < 0.0) throw std::invalid_argument("chisq_sf: x must be >= 0");
    return incomplete_gamma(0.5 * dist.df, 0.5 * x).q;
}

double chisq_cdf(double x, int df) {
    ChiSqDist dist(df);
    if (x < 0.0) throw std::invalid_argument("chisq_cdf: x must be >= 0");
    return incomplete_gamma(0.5 * dist.df, 0.5 * x).p;
}

double chisq_quantile(double prob, int df) {
    ChiSqDist dist(df);
    if (!(prob > 0.0 && prob < 1.0)) {
        throw std::invalid_argument("chisq_quantile: prob must lie in (0,1)");
    }
    double lo = 0.0;
    double hi = std::max(1.0, static_cast<double>(df));
    while (chisq_cdf(hi, df) < prob) hi *= 2.0;
    for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (chisq_cdf(mid, df) < prob) lo = mid; else hi = mid;
    }
    return 0.5 * (lo + hi);
}

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

RandomStream::RandomStream(std::uint64_t master_seed, std::uint64_t index) {
    std::uint64_t s = master_seed;
    const std::uint64_t a = splitmix64(s);
    s = a ^ (index * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL);
    std::seed_seq seq{splitmix64(s), splitmix64(s), splitmix64(s), splitmix64(s)};
    eng_.seed(seq);
}

double RandomStream::uniform() {
    // 53 random bits, shifted off zero
    return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53;
}

double RandomStream::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u, v, s;
    do {
        u = 2.0 * uniform() - 1.0;
        v = 2.0 * uniform() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
}

VectorXd sample_mvn(const VectorXd& mean, const MatrixXd& cov_chol, RandomStream& rng) {
    if (cov_chol.rows() != mean.size() || cov_chol.cols() != mean.size()) {
        throw std::invalid_argument("sample_mvn: dimension mismatch");
    }
    VectorXd z(mean.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
    return mean + cov_chol.triangularView<Eigen::Lower>() * z;
}

VectorXd sample_mvn(const VectorXd& mean, const MatrixXd& cov_chol, std::uint64_t seed) {
    RandomStream rng(seed);
    return sample_mvn(mean, cov_chol, rng);
}

}  // namespace mlmtest
