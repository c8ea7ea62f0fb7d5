#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlmtest/corrections.hpp"
#include "mlmtest/design.hpp"
#include "mlmtest/likelihood.hpp"

namespace mlmtest {

using Eigen::VectorXd;

struct Statistic {
    double value = 0.0;
    double p_value = 1.0;
    bool available = false;
    std::string reason;  // why the statistic is unavailable
};

struct TestOptions {
    FitOptions fit;
    AdjustedOptions adjusted;
    CorrectionPath path = CorrectionPath::automatic;
    TraceVariant variant = TraceVariant::exact;
    bool cox_reid = true;          // compute LR_CR and LR*_CR
    double negative_tol = 1e-6;    // statistics in (-tol, 0) are clamped to zero
};

struct TestReport {
    int df = 0;
    VectorXd psi0;
    Statistic LR, LR_star, LR_cr, LR_cr_star;
    double C = 0.0, C_star = 0.0;
    bool constants_available = false;
    BartlettConstants constants;

    FitResult ml;          // unrestricted maximum likelihood
    FitResult restricted;  // maximum likelihood under H0
    FitResult adjusted;    // adjusted-profile maximizer psi-tilde
    double adjusted_null = 0.0;  // l_pa(psi0)
    bool has_adjusted = false;

    std::vector<std::string> flags;
};

TestReport run_tests(const Design& design, const VectorXd& psi0, const TestOptions& opts = {});
TestReport run_tests(const LongitudinalDataset& data, const ModelSpec& spec, const std::optional<VectorXd>& psi0,
                     const TestOptions& opts = {});

}  // namespace mlmtest
