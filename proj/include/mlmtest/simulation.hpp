#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlmtest/design.hpp"
#include "mlmtest/numutil.hpp"
#include "mlmtest/testing.hpp"

namespace mlmtest {

using Eigen::VectorXd;

inline constexpr int n_statistics = 4;
inline constexpr std::array<const char*, n_statistics> statistic_names{"LR", "LR*", "LR_CR", "LR*_CR"};

struct Scenario {
    int N = 12;
    double omega2 = 0.0;  // G12
    double omega3 = 0.5;  // G22
};

struct SimConfig {
    std::vector<Scenario> scenarios{Scenario{}};
    int replications = 5000;
    std::vector<double> alphas{0.05, 0.10};
    std::uint64_t master_seed = 20240601;
    VectorXd beta = (VectorXd(4) << 0.0, 0.2, 0.0, 0.0).finished();  // intercept, slope, x2, x3
    double omega1 = 1.0;   // G11
    double omega4 = 0.05;  // error variance
    std::string tau_rule = "cycle";     // tau_i = 2 + (i mod 8)
    std::string dummy_rule = "thirds";  // groups (0,0), (1,0), (0,1) by unit index
    int threads = 0;                    // 0: OpenMP default
    bool keep_values = true;
    bool true_constants = false;   // also evaluate C and C* at the true omega
    bool compare_variant = false;  // also correct with the other trace variant
    TestOptions test;

    void validate() const;  // throws InvalidConfig
};

// Built-in scenario lists: "table1" enumerates N in {12, 24, 36} x omega2 in
// {0, 0.25} x omega3 in {0.5, 1}.
std::vector<Scenario> preset_scenarios(const std::string& name);

struct ReplicationOutcome {
    std::array<double, n_statistics> value{};    // NaN when unavailable
    std::array<double, n_statistics> p_value{};  // NaN when unavailable
    double C = 0.0, C_star = 0.0;            // at the restricted estimates
    double C_true = 0.0, C_star_true = 0.0;  // at the true omega (NaN unless requested)
    // LR* and LR*_CR under the other trace variant (NaN unless requested)
    std::array<double, 2> alt_value{}, alt_p_value{};
    bool failed = false;  // LR itself could not be computed
    std::string failure;
};

struct RateEntry {
    int statistic = 0;
    double alpha = 0.0;
    double rate = 0.0;    // percent
    double mc_se = 0.0;   // percent
    int rejections = 0;
    int used = 0;         // replications with the statistic available
};

struct ScenarioResult {
    Scenario scenario;
    std::uint64_t stream_key = 0;
    int replications = 0;
    std::vector<RateEntry> rates;            // statistic-major, then alpha
    std::array<int, n_statistics> failures{};
    int failed_replications = 0;             // replications with LR unavailable
    bool flagged = false;                    // more than 2% of replications lost a statistic
    std::array<double, n_statistics> mean{}; // mean of each available statistic
    std::array<double, n_statistics> mean_se{};
    double mean_C = 0.0, mean_C_star = 0.0;
    double mean_C_true = 0.0, mean_C_star_true = 0.0;
    std::vector<RateEntry> alt_rates;        // statistics 1 and 3 under the other variant
    std::vector<ReplicationOutcome> outcomes;  // replication order; empty unless keep_values
    double seconds = 0.0;

    const RateEntry& rate(int statistic, double alpha) const;
    const RateEntry& alt_rate(int statistic, double alpha) const;
};

struct SimResult {
    SimConfig config;
    std::vector<ScenarioResult> scenarios;
    int threads_used = 1;
};

// Per-replication design and response for a scenario.
Design simulate_dataset(const SimConfig& config, const Scenario& sc, RandomStream& rng);
std::uint64_t scenario_key(std::uint64_t master_seed, const Scenario& sc);

ReplicationOutcome run_replication(const SimConfig& config, const Scenario& sc, std::uint64_t key, int index);

// OpenMP over replications; identical to the serial reference for any thread count.
SimResult run_size_study(const SimConfig& config);
SimResult run_size_study_serial(const SimConfig& config);

struct QuantileRow {
    double probability = 0.0;
    double asymptotic = 0.0;                          // chi-square quantile
    std::array<double, n_statistics> discrepancy{};   // (empirical - asymptotic) / asymptotic
};

std::vector<double> default_quantile_grid();
double empirical_quantile(std::vector<double> values, double prob);
std::vector<QuantileRow> quantile_discrepancies(const ScenarioResult& result, int df,
                                                const std::vector<double>& probs = default_quantile_grid());

struct ReferenceRow {
    Scenario scenario;
    std::array<double, n_statistics> at5;
    std::array<double, n_statistics> at10;
};
// Reference null rejection rates (percent) for the table1 preset.
const std::vector<ReferenceRow>& reference_rates();

}  // namespace mlmtest
