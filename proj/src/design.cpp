#include "mlmtest/design.hpp"

#include <algorithm>
#include <numeric>

#include "mlmtest/errors.hpp"

namespace mlmtest {

int LongitudinalDataset::column(const std::string& name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) fail(ErrorKind::missing_column, "column '" + name + "' not found in dataset");
    return static_cast<int>(it - columns.begin());
}

bool LongitudinalDataset::has_column(const std::string& name) const {
    return std::find(columns.begin(), columns.end(), name) != columns.end();
}

std::size_t LongitudinalDataset::total_rows() const {
    std::size_t t = 0;
    for (const auto& u : units) t += static_cast<std::size_t>(u.values.rows());
    return t;
}

int Design::T() const { return std::accumulate(tau.begin(), tau.end(), 0); }

Design make_design(std::vector<VectorXd> y, std::vector<MatrixXd> X, std::vector<MatrixXd> Z, int p,
                   const CovarianceFamily& family) {
    if (y.empty()) fail(ErrorKind::empty_unit, "design has no units");
    if (X.size() != y.size() || Z.size() != y.size()) throw std::invalid_argument("make_design: unit counts differ");
    Design d;
    d.n = static_cast<int>(X[0].cols());
    d.p = p;
    if (p < 1 || p > d.n) throw std::invalid_argument("make_design: need 1 <= p <= n");
    d.family = family;
    for (size_t i = 0; i < y.size(); ++i) {
        const auto tau = y[i].size();
        if (tau < 1) fail(ErrorKind::empty_unit, "unit " + std::to_string(i) + " has no observations");
        if (X[i].rows() != tau || X[i].cols() != d.n || Z[i].rows() != tau || Z[i].cols() != family.q) {
            throw std::invalid_argument("make_design: unit " + std::to_string(i) + " has inconsistent shapes");
        }
        d.tau.push_back(static_cast<int>(tau));
    }
    d.y = std::move(y);
    d.X = std::move(X);
    d.Z = std::move(Z);
    for (int j = 0; j < d.n; ++j) {
        d.coef_names.push_back("x" + std::to_string(j + 1));
        d.spec_index.push_back(j);
    }
    for (int j = 0; j < family.q; ++j) d.random_names.push_back("z" + std::to_string(j + 1));
    return d;
}

namespace {

VectorXd term_column(const LongitudinalDataset& data, const LongitudinalDataset::Unit& unit, const std::string& term) {
    const auto tau = unit.values.rows();
    VectorXd v = VectorXd::Ones(tau);
    if (term == "1") return v;
    std::size_t start = 0;
    while (true) {
        const auto pos = term.find(':', start);
        const std::string factor = term.substr(start, pos == std::string::npos ? std::string::npos : pos - start);
        if (factor.empty()) fail(ErrorKind::invalid_config, "malformed term '" + term + "'");
        if (factor != "1") v = v.cwiseProduct(unit.values.col(data.column(factor)));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return v;
}

}  // namespace

Design build_design(const LongitudinalDataset& data, const ModelSpec& spec) {
    if (data.units.empty()) fail(ErrorKind::empty_unit, "dataset has no units");
    if (spec.fixed.empty()) fail(ErrorKind::invalid_config, "no fixed-effect terms given");
    if (spec.interest.empty()) fail(ErrorKind::invalid_config, "interest set is empty");
    const int ycol = data.column(spec.response);

    std::vector<int> order;
    for (const auto& t : spec.interest) {
        auto it = std::find(spec.fixed.begin(), spec.fixed.end(), t);
        if (it == spec.fixed.end()) fail(ErrorKind::invalid_config, "interest term '" + t + "' is not a fixed-effect term");
        const int idx = static_cast<int>(it - spec.fixed.begin());
        if (std::find(order.begin(), order.end(), idx) != order.end()) {
            fail(ErrorKind::invalid_config, "interest term '" + t + "' listed twice");
        }
        order.push_back(idx);
    }
    for (int j = 0; j < static_cast<int>(spec.fixed.size()); ++j) {
        if (std::count(spec.fixed.begin(), spec.fixed.end(), spec.fixed[j]) > 1) {
            fail(ErrorKind::invalid_config, "fixed-effect term '" + spec.fixed[j] + "' listed twice");
        }
        if (std::find(order.begin(), order.end(), j) == order.end()) order.push_back(j);
    }

    const auto fam = CovarianceFamily::from_id(spec.family, static_cast<int>(spec.random.size()));
    std::vector<VectorXd> ys;
    std::vector<MatrixXd> Xs, Zs;
    for (const auto& u : data.units) {
        const auto tau = u.values.rows();
        if (tau < 1) fail(ErrorKind::empty_unit, "unit '" + u.id + "' has no observations");
        MatrixXd X(tau, static_cast<Eigen::Index>(order.size()));
        for (size_t c = 0; c < order.size(); ++c) X.col(static_cast<Eigen::Index>(c)) = term_column(data, u, spec.fixed[order[c]]);
        MatrixXd Z(tau, static_cast<Eigen::Index>(spec.random.size()));
        for (size_t c = 0; c < spec.random.size(); ++c) Z.col(static_cast<Eigen::Index>(c)) = term_column(data, u, spec.random[c]);
        ys.push_back(u.values.col(ycol));
        Xs.push_back(std::move(X));
        Zs.push_back(std::move(Z));
    }
    Design d = make_design(std::move(ys), std::move(Xs), std::move(Zs), static_cast<int>(spec.interest.size()), fam);
    d.coef_names.clear();
    d.spec_index = order;
    for (int idx : order) d.coef_names.push_back(spec.fixed[idx]);
    d.random_names = spec.random;

    const auto bad = dependent_columns(d);
    if (!bad.empty()) {
        std::string names;
        for (const auto& b : bad) names += (names.empty() ? "" : ", ") + b;
        fail(ErrorKind::rank_deficient_design, "fixed-effect design is rank deficient; dependent columns: " + names);
    }
    return d;
}

std::vector<std::string> dependent_columns(const Design& design, double cond_limit) {
    MatrixXd xtx = MatrixXd::Zero(design.n, design.n);
    for (const auto& X : design.X) xtx.noalias() += X.transpose() * X;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(xtx, Eigen::EigenvaluesOnly);
    const double hi = es.eigenvalues().maxCoeff();
    const double lo = es.eigenvalues().minCoeff();
    if (hi > 0.0 && lo > hi / cond_limit) return {};

    // greedy scan: a column is dependent if it adds (numerically) nothing
    std::vector<std::string> bad;
    std::vector<int> kept;
    for (int j = 0; j < design.n; ++j) {
        std::vector<int> trial = kept;
        trial.push_back(j);
        MatrixXd sub(trial.size(), trial.size());
        for (size_t a = 0; a < trial.size(); ++a)
            for (size_t b = 0; b < trial.size(); ++b) sub(a, b) = xtx(trial[a], trial[b]);
        Eigen::SelfAdjointEigenSolver<MatrixXd> s(sub, Eigen::EigenvaluesOnly);
        const double shi = s.eigenvalues().maxCoeff();
        if (shi > 0.0 && s.eigenvalues().minCoeff() > shi / cond_limit) {
            kept = trial;
        } else {
            bad.push_back(design.coef_names[j]);
        }
    }
    return bad;
}

}  // namespace mlmtest
