#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlmtest/covariance.hpp"

namespace mlmtest {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct LongitudinalDataset {
    struct Unit {
        std::string id;
        MatrixXd values;  // tau_i x columns, rows in file order
    };

    std::string unit_column;
    std::vector<std::string> columns;  // numeric columns
    std::vector<Unit> units;           // ordered by first appearance

    int column(const std::string& name) const;  // throws MissingColumn
    bool has_column(const std::string& name) const;
    std::size_t total_rows() const;
};

// Terms are column names, "1" for the intercept, or products "a:b".
struct ModelSpec {
    std::string response;
    std::vector<std::string> fixed;
    std::vector<std::string> random;
    std::vector<std::string> interest;
    std::string family = "unstructured-G";
};

// Per-unit design with the interest columns moved to the front:
// X_i = (Xp_i, Xt_i), beta = (psi, varsigma).
struct Design {
    std::vector<VectorXd> y;
    std::vector<MatrixXd> X;
    std::vector<MatrixXd> Z;
    std::vector<int> tau;
    int n = 0;
    int p = 0;
    CovarianceFamily family;
    std::vector<std::string> coef_names;    // in design (interest-first) order
    std::vector<std::string> random_names;
    std::vector<int> spec_index;            // design position -> position in ModelSpec::fixed

    int N() const { return static_cast<int>(y.size()); }
    int T() const;
    int nuisance() const { return n - p; }
    auto Xp(int i) const { return X[i].leftCols(p); }
    auto Xt(int i) const { return X[i].rightCols(n - p); }
};

Design make_design(std::vector<VectorXd> y, std::vector<MatrixXd> X, std::vector<MatrixXd> Z, int p,
                   const CovarianceFamily& family);

Design build_design(const LongitudinalDataset& data, const ModelSpec& spec);

// Columns of the stacked design that make it rank deficient (empty if full rank).
std::vector<std::string> dependent_columns(const Design& design, double cond_limit = 1e12);

}  // namespace mlmtest
