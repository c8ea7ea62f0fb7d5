#include "mlmtest/covariance.hpp"

#include <cmath>

#include "mlmtest/errors.hpp"
#include "mlmtest/numutil.hpp"

namespace mlmtest {

CovarianceFamily CovarianceFamily::from_id(const std::string& id, int q) {
    CovarianceFamily f;
    f.q = q;
    if (id == "iid") {
        if (q != 0) fail(ErrorKind::invalid_config, "family 'iid' takes no random-effect terms");
    } else if (id == "unstructured-G") {
        if (q < 1) fail(ErrorKind::invalid_config, "family 'unstructured-G' needs at least one random-effect term");
    } else if (id == "ar1-errors") {
        if (q != 0) fail(ErrorKind::invalid_config, "family 'ar1-errors' takes no random-effect terms; use 'unstructured-G+ar1-errors'");
        f.errors = ErrorStructure::ar1;
    } else if (id == "unstructured-G+ar1-errors") {
        if (q < 1) fail(ErrorKind::invalid_config, "family 'unstructured-G+ar1-errors' needs random-effect terms");
        f.errors = ErrorStructure::ar1;
    } else {
        fail(ErrorKind::invalid_config, "unknown covariance family '" + id + "'");
    }
    return f;
}

std::string CovarianceFamily::id() const {
    if (errors == ErrorStructure::iid) return q == 0 ? "iid" : "unstructured-G";
    return q == 0 ? "ar1-errors" : "unstructured-G+ar1-errors";
}

int CovarianceFamily::g_index(int a, int b) const {
    if (a > b) std::swap(a, b);
    // row a of the upper triangle starts after rows 0..a-1
    return a * q - a * (a - 1) / 2 + (b - a);
}

std::vector<std::string> CovarianceFamily::parameter_names() const {
    std::vector<std::string> names;
    for (int a = 0; a < q; ++a)
        for (int b = a; b < q; ++b)
            names.push_back("G" + std::to_string(a + 1) + std::to_string(b + 1));
    if (errors == ErrorStructure::ar1) names.push_back("rho");
    names.push_back("sigma2");
    return names;
}

CovarianceModel::CovarianceModel(CovarianceFamily family, VectorXd omega)
    : family_(family), omega_(std::move(omega)) {
    if (omega_.size() != family_.dim()) {
        throw std::invalid_argument("CovarianceModel: omega has length " + std::to_string(omega_.size()) +
                                    ", family '" + family_.id() + "' needs " + std::to_string(family_.dim()));
    }
}

MatrixXd CovarianceModel::G() const {
    const int q = family_.q;
    MatrixXd g(q, q);
    for (int a = 0; a < q; ++a)
        for (int b = 0; b < q; ++b) g(a, b) = omega_(family_.g_index(a, b));
    return g;
}

double CovarianceModel::rho() const {
    return family_.errors == ErrorStructure::ar1 ? omega_(family_.rho_index()) : 0.0;
}

namespace {

bool finite_all(const VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i)
        if (!std::isfinite(v(i))) return false;
    return true;
}

}  // namespace

bool CovarianceModel::feasible() const {
    if (!finite_all(omega_) || !(variance() > 0.0)) return false;
    if (family_.errors == ErrorStructure::ar1 && !(std::abs(rho()) < 1.0)) return false;
    if (family_.q == 0) return true;
    Eigen::LLT<MatrixXd> llt;
    return try_cholesky(G(), llt);
}

bool CovarianceModel::feasible_closed() const {
    if (!finite_all(omega_) || !(variance() > 0.0)) return false;
    if (family_.errors == ErrorStructure::ar1 && !(std::abs(rho()) < 1.0)) return false;
    if (family_.q == 0) return true;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(G(), Eigen::EigenvaluesOnly);
    const double scale = std::max(1.0, G().cwiseAbs().maxCoeff());
    return es.eigenvalues().minCoeff() >= -1e-12 * scale;
}

bool CovarianceModel::near_boundary(double tol) const {
    if (family_.errors == ErrorStructure::ar1 && std::abs(rho()) > 1.0 - 1e-6) return true;
    if (family_.q == 0) return false;
    return G().determinant() < tol;
}

CovarianceModel ar1_family(double rho, double variance, int q, const VectorXd& g_params) {
    CovarianceFamily fam;
    fam.q = q;
    fam.errors = ErrorStructure::ar1;
    if (g_params.size() != fam.n_g()) throw std::invalid_argument("ar1_family: wrong number of G parameters");
    VectorXd omega(fam.dim());
    omega.head(fam.n_g()) = g_params;
    omega(fam.rho_index()) = rho;
    omega(fam.variance_index()) = variance;
    CovarianceModel model(fam, omega);
    if (!model.feasible_closed()) fail(ErrorKind::infeasible_omega, "ar1_family: parameters outside the feasible region");
    return model;
}

MatrixXd unit_sigma(const CovarianceModel& model, const MatrixXd& Z) {
    const auto tau = Z.rows();
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out(tau, tau);
    unit_sigma_generic<double>(model.family(), Z, model.omega().data(), out.data());
    return out;
}

namespace {

// rho^k with rho^0 = 1 and negative powers treated as 0 (they only ever carry
// a zero coefficient).
double ipow(double r, int k) {
    if (k < 0) return 0.0;
    double v = 1.0;
    for (int i = 0; i < k; ++i) v *= r;
    return v;
}

}  // namespace

void unit_sigma_d1(const CovarianceModel& model, const MatrixXd& Z, std::vector<MatrixXd>& out) {
    const auto& fam = model.family();
    const int tau = static_cast<int>(Z.rows());
    const int dim = fam.dim();
    out.assign(dim, MatrixXd::Zero(tau, tau));
    for (int a = 0; a < fam.q; ++a) {
        for (int b = a; b < fam.q; ++b) {
            MatrixXd& d = out[fam.g_index(a, b)];
            d.noalias() = Z.col(a) * Z.col(b).transpose();
            if (a != b) d += Z.col(b) * Z.col(a).transpose();
        }
    }
    MatrixXd& dv = out[fam.variance_index()];
    if (fam.errors == ErrorStructure::iid) {
        dv.setIdentity();
    } else {
        const double r = model.rho();
        const double s2 = model.variance();
        MatrixXd& dr = out[fam.rho_index()];
        for (int i = 0; i < tau; ++i) {
            for (int j = 0; j < tau; ++j) {
                const int k = std::abs(i - j);
                dv(i, j) = ipow(r, k);
                dr(i, j) = s2 * k * ipow(r, k - 1);
            }
        }
    }
}

void unit_sigma_d2(const CovarianceModel& model, const MatrixXd& Z, std::vector<MatrixXd>& out) {
    const auto& fam = model.family();
    const int tau = static_cast<int>(Z.rows());
    const int dim = fam.dim();
    out.assign(static_cast<size_t>(dim) * dim, MatrixXd::Zero(tau, tau));
    if (fam.errors == ErrorStructure::iid) return;
    const double r = model.rho();
    const double s2 = model.variance();
    const int jr = fam.rho_index();
    const int jv = fam.variance_index();
    MatrixXd& rr = out[jr * dim + jr];
    MatrixXd& rv = out[jr * dim + jv];
    for (int i = 0; i < tau; ++i) {
        for (int j = 0; j < tau; ++j) {
            const int k = std::abs(i - j);
            rr(i, j) = s2 * k * (k - 1) * ipow(r, k - 2);
            rv(i, j) = k * ipow(r, k - 1);
        }
    }
    out[jv * dim + jr] = rv;
}

namespace {

bool fill_unit(const CovarianceModel& model, const MatrixXd& Z, int tau, int order, UnitSigma& u) {
    u.sigma = unit_sigma(model, Z);
    Eigen::LLT<MatrixXd> llt;
    if (!try_cholesky(u.sigma, llt)) return false;
    u.logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    u.inv = llt.solve(MatrixXd::Identity(tau, tau));
    u.inv = 0.5 * (u.inv + u.inv.transpose());
    if (order >= 1) unit_sigma_d1(model, Z, u.d1);
    if (order >= 2) unit_sigma_d2(model, Z, u.d2);
    return true;
}

void inverse_derivatives_unit(UnitSigma& u, int dim, int order) {
    u.d1inv.resize(dim);
    for (int j = 0; j < dim; ++j) u.d1inv[j] = -(u.inv * u.d1[j]) * u.inv;
    if (order < 2) return;
    u.d2inv.resize(static_cast<size_t>(dim) * dim);
    for (int j = 0; j < dim; ++j) {
        for (int k = j; k < dim; ++k) {
            // -(S^k S_j S^-1 + S^-1 S_j S^k) - S^-1 S_jk S^-1, symmetric in (j, k)
            MatrixXd h = -(u.d1inv[k] * u.d1[j] * u.inv) - (u.inv * u.d1[j] * u.d1inv[k]);
            h -= u.inv * u.d2[j * dim + k] * u.inv;
            u.d2inv[j * dim + k] = h;
            u.d2inv[k * dim + j] = h;
        }
    }
}

// Units are independent; below this count threading costs more than it saves.
constexpr std::size_t parallel_unit_threshold = 64;

SigmaBundle build_sigma_impl(const CovarianceModel& model, const std::vector<MatrixXd>& Z_blocks,
                             const std::vector<int>& tau, int order, bool parallel) {
    if (Z_blocks.size() != tau.size()) throw std::invalid_argument("build_sigma: Z_blocks and tau differ in length");
    if (!model.feasible_closed()) fail(ErrorKind::infeasible_omega, "omega is outside the feasible region");
    for (size_t i = 0; i < Z_blocks.size(); ++i) {
        if (Z_blocks[i].rows() != tau[i] || Z_blocks[i].cols() != model.family().q) {
            throw std::invalid_argument("build_sigma: Z block " + std::to_string(i) + " has the wrong shape");
        }
    }
    SigmaBundle bundle;
    bundle.family = model.family();
    bundle.omega = model.omega();
    bundle.order = order;
    const long n = static_cast<long>(Z_blocks.size());
    bundle.units.resize(Z_blocks.size());
    std::vector<char> ok(Z_blocks.size(), 1);
#pragma omp parallel for schedule(static) if (parallel && Z_blocks.size() >= parallel_unit_threshold)
    for (long i = 0; i < n; ++i) ok[i] = fill_unit(model, Z_blocks[i], tau[i], order, bundle.units[i]);
    // report the first failing unit, independent of scheduling
    for (size_t i = 0; i < ok.size(); ++i) {
        if (!ok[i]) fail(ErrorKind::not_positive_definite, "unit covariance block " + std::to_string(i) + " is not positive definite");
    }
    return bundle;
}

SigmaBundle inverse_derivatives_impl(SigmaBundle bundle, bool parallel) {
    const int dim = bundle.dim();
    if (bundle.order < 1) throw std::invalid_argument("derived_inverse_derivatives: bundle lacks first derivatives");
    const long n = static_cast<long>(bundle.units.size());
#pragma omp parallel for schedule(static) if (parallel && bundle.units.size() >= parallel_unit_threshold)
    for (long i = 0; i < n; ++i) inverse_derivatives_unit(bundle.units[i], dim, bundle.order);
    bundle.has_inverse_derivatives = true;
    return bundle;
}

}  // namespace

SigmaBundle build_sigma(const CovarianceModel& model, const std::vector<MatrixXd>& Z_blocks,
                        const std::vector<int>& tau, int order) {
    return build_sigma_impl(model, Z_blocks, tau, order, true);
}

SigmaBundle build_sigma_serial(const CovarianceModel& model, const std::vector<MatrixXd>& Z_blocks,
                               const std::vector<int>& tau, int order) {
    return build_sigma_impl(model, Z_blocks, tau, order, false);
}

SigmaBundle derived_inverse_derivatives(SigmaBundle bundle) { return inverse_derivatives_impl(std::move(bundle), true); }

SigmaBundle derived_inverse_derivatives_serial(SigmaBundle bundle) {
    return inverse_derivatives_impl(std::move(bundle), false);
}

MatrixXd stack_blocks(const std::vector<MatrixXd>& blocks) {
    Eigen::Index rows = 0, cols = 0;
    for (const auto& b : blocks) { rows += b.rows(); cols += b.cols(); }
    MatrixXd out = MatrixXd::Zero(rows, cols);
    Eigen::Index r = 0, c = 0;
    for (const auto& b : blocks) {
        out.block(r, c, b.rows(), b.cols()) = b;
        r += b.rows();
        c += b.cols();
    }
    return out;
}

VectorXd to_unconstrained(const CovarianceFamily& fam, const VectorXd& omega) {
    CovarianceModel model(fam, omega);
    if (!model.feasible()) fail(ErrorKind::infeasible_omega, "cannot map an infeasible omega to unconstrained coordinates");
    VectorXd theta(fam.dim());
    if (fam.q > 0) {
        Eigen::LLT<MatrixXd> llt(model.G());
        const MatrixXd L = llt.matrixL();
        int idx = 0;
        for (int i = 0; i < fam.q; ++i)
            for (int j = 0; j <= i; ++j) theta(idx++) = (i == j) ? std::log(L(i, i)) : L(i, j);
    }
    if (fam.errors == ErrorStructure::ar1) theta(fam.rho_index()) = std::atanh(model.rho());
    theta(fam.variance_index()) = std::log(model.variance());
    return theta;
}

namespace {

MatrixXd lower_factor(const CovarianceFamily& fam, const VectorXd& theta) {
    MatrixXd L = MatrixXd::Zero(fam.q, fam.q);
    int idx = 0;
    for (int i = 0; i < fam.q; ++i)
        for (int j = 0; j <= i; ++j, ++idx) L(i, j) = (i == j) ? std::exp(theta(idx)) : theta(idx);
    return L;
}

}  // namespace

VectorXd from_unconstrained(const CovarianceFamily& fam, const VectorXd& theta) {
    VectorXd omega(fam.dim());
    if (fam.q > 0) {
        const MatrixXd L = lower_factor(fam, theta);
        const MatrixXd G = L * L.transpose();
        for (int a = 0; a < fam.q; ++a)
            for (int b = a; b < fam.q; ++b) omega(fam.g_index(a, b)) = G(a, b);
    }
    if (fam.errors == ErrorStructure::ar1) omega(fam.rho_index()) = std::tanh(theta(fam.rho_index()));
    omega(fam.variance_index()) = std::exp(theta(fam.variance_index()));
    return omega;
}

MatrixXd unconstrained_jacobian(const CovarianceFamily& fam, const VectorXd& theta) {
    const int dim = fam.dim();
    MatrixXd J = MatrixXd::Zero(dim, dim);
    if (fam.q > 0) {
        const MatrixXd L = lower_factor(fam, theta);
        int idx = 0;
        for (int i = 0; i < fam.q; ++i) {
            for (int j = 0; j <= i; ++j, ++idx) {
                const double chain = (i == j) ? L(i, i) : 1.0;
                // dG_ab/dL_ij = [a == i] L_bj + [b == i] L_aj
                for (int a = 0; a < fam.q; ++a) {
                    for (int b = a; b < fam.q; ++b) {
                        double v = 0.0;
                        if (a == i) v += L(b, j);
                        if (b == i) v += L(a, j);
                        J(fam.g_index(a, b), idx) = v * chain;
                    }
                }
            }
        }
    }
    if (fam.errors == ErrorStructure::ar1) {
        const double t = std::tanh(theta(fam.rho_index()));
        J(fam.rho_index(), fam.rho_index()) = 1.0 - t * t;
    }
    J(fam.variance_index(), fam.variance_index()) = std::exp(theta(fam.variance_index()));
    return J;
}

}  // namespace mlmtest
