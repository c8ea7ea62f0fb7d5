#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mlmtest {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class ErrorStructure { iid, ar1 };

// Parameter layout: upper triangle of G row by row (G11, G12, ..., G22, ...),
// then rho for AR(1) errors, then the error variance last.
struct CovarianceFamily {
    int q = 0;
    ErrorStructure errors = ErrorStructure::iid;

    static CovarianceFamily from_id(const std::string& id, int q);
    std::string id() const;

    int n_g() const { return q * (q + 1) / 2; }
    int m() const { return n_g() + (errors == ErrorStructure::ar1 ? 1 : 0); }
    int dim() const { return m() + 1; }
    int rho_index() const { return errors == ErrorStructure::ar1 ? n_g() : -1; }
    int variance_index() const { return m(); }
    int g_index(int a, int b) const;
    bool is_linear() const { return errors == ErrorStructure::iid; }
    std::vector<std::string> parameter_names() const;
};

class CovarianceModel {
public:
    CovarianceModel(CovarianceFamily family, VectorXd omega);

    const CovarianceFamily& family() const { return family_; }
    const VectorXd& omega() const { return omega_; }
    int m() const { return family_.m(); }
    bool is_linear() const { return family_.is_linear(); }

    MatrixXd G() const;
    double variance() const { return omega_(family_.variance_index()); }
    double rho() const;

    // Open feasible set: G positive definite, |rho| < 1, variance > 0.
    bool feasible() const;
    // Closed in G (positive semidefinite allowed); the covariance stays PD.
    bool feasible_closed() const;
    bool near_boundary(double tol = 1e-8) const;

private:
    CovarianceFamily family_;
    VectorXd omega_;
};

CovarianceModel ar1_family(double rho, double variance, int q = 0, const VectorXd& g_params = VectorXd());

// Unit covariance block from any scalar type (double here; hyperdual numbers in
// the cumulant oracle). out is tau x tau, row-major.
template <class S>
void unit_sigma_generic(const CovarianceFamily& fam, const MatrixXd& Z, const S* omega, S* out) {
    const int tau = static_cast<int>(Z.rows());
    const int q = fam.q;
    for (int r = 0; r < tau; ++r) {
        for (int c = 0; c < tau; ++c) {
            S v = omega[0] * 0.0;
            for (int a = 0; a < q; ++a) {
                for (int b = 0; b < q; ++b) {
                    v = v + omega[fam.g_index(a, b)] * (Z(r, a) * Z(c, b));
                }
            }
            const S& s2 = omega[fam.variance_index()];
            if (fam.errors == ErrorStructure::iid) {
                if (r == c) v = v + s2;
            } else {
                const int lag = r > c ? r - c : c - r;
                S pw = omega[0] * 0.0 + 1.0;
                for (int l = 0; l < lag; ++l) pw = pw * omega[fam.rho_index()];
                v = v + s2 * pw;
            }
            out[r * tau + c] = v;
        }
    }
}

struct UnitSigma {
    MatrixXd sigma;
    MatrixXd inv;
    double logdet = 0.0;
    std::vector<MatrixXd> d1;     // dSigma/domega_j
    std::vector<MatrixXd> d2;     // d2Sigma/domega_j domega_k at j * dim + k
    std::vector<MatrixXd> d1inv;  // dSigma^{-1}/domega_j
    std::vector<MatrixXd> d2inv;  // d2Sigma^{-1}/domega_j domega_k at j * dim + k
};

struct SigmaBundle {
    CovarianceFamily family;
    VectorXd omega;
    std::vector<UnitSigma> units;
    int order = 0;
    bool has_inverse_derivatives = false;

    int dim() const { return family.dim(); }
};

MatrixXd unit_sigma(const CovarianceModel& model, const MatrixXd& Z);
void unit_sigma_d1(const CovarianceModel& model, const MatrixXd& Z, std::vector<MatrixXd>& out);
void unit_sigma_d2(const CovarianceModel& model, const MatrixXd& Z, std::vector<MatrixXd>& out);

// order: 0 values only, 1 adds first derivatives, 2 adds second derivatives.
// Units are processed with OpenMP when there are many of them; the _serial
// variants are the single-threaded reference and give identical results.
SigmaBundle build_sigma(const CovarianceModel& model,
                        const std::vector<MatrixXd>& Z_blocks,
                        const std::vector<int>& tau,
                        int order = 2);
SigmaBundle build_sigma_serial(const CovarianceModel& model,
                               const std::vector<MatrixXd>& Z_blocks,
                               const std::vector<int>& tau,
                               int order = 2);

SigmaBundle derived_inverse_derivatives(SigmaBundle bundle);
SigmaBundle derived_inverse_derivatives_serial(SigmaBundle bundle);

// Block-diagonal assembly, for tests and small-instance oracles only.
MatrixXd stack_blocks(const std::vector<MatrixXd>& blocks);

// Unconstrained coordinates for optimization: G = L L^T with log-diagonal L,
// rho = tanh(theta), variance = exp(theta).
VectorXd to_unconstrained(const CovarianceFamily& fam, const VectorXd& omega);
VectorXd from_unconstrained(const CovarianceFamily& fam, const VectorXd& theta);
MatrixXd unconstrained_jacobian(const CovarianceFamily& fam, const VectorXd& theta);

}  // namespace mlmtest
