#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace mlmtest {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Dense symmetric matrix; construction symmetrizes and rejects asymmetric input.
class SymMatrix {
public:
    SymMatrix() = default;
    explicit SymMatrix(const MatrixXd& a, double tol = 1e-10);

    Eigen::Index dim() const { return m_.rows(); }
    const MatrixXd& matrix() const { return m_; }
    double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

private:
    MatrixXd m_;
};

// A^{-1} B via Cholesky. Throws NotPositiveDefinite instead of regularizing.
MatrixXd chol_solve(const SymMatrix& a, const MatrixXd& b);

// Cholesky factor with an explicit failure report; used by hot loops that
// must not allocate a SymMatrix.
bool try_cholesky(const MatrixXd& a, Eigen::LLT<MatrixXd>& llt);

struct ChiSqDist {
    int df;
    explicit ChiSqDist(int df_);
};

double chisq_sf(double x, int df);
double chisq_cdf(double x, int df);
double chisq_quantile(double prob, int df);

// Regularized incomplete gamma P(a, x) and Q(a, x), computed together so the
// pair sums to one to rounding.
struct GammaPQ {
    double p;
    double q;
};
GammaPQ incomplete_gamma(double a, double x);

std::uint64_t splitmix64(std::uint64_t& state);

// Independent stream per (master_seed, index). mt19937_64 output is fixed by
// the standard and the transforms below are ours, so streams are portable.
class RandomStream {
public:
    RandomStream(std::uint64_t master_seed, std::uint64_t index = 0);

    double uniform();  // in (0, 1)
    double normal();

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

VectorXd sample_mvn(const VectorXd& mean, const MatrixXd& cov_chol, RandomStream& rng);
VectorXd sample_mvn(const VectorXd& mean, const MatrixXd& cov_chol, std::uint64_t seed);

}  // namespace mlmtest
