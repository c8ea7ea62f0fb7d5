#include "mlmtest/simulation.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <omp.h>

#include "mlmtest/errors.hpp"

namespace mlmtest {

namespace {

const double nan = std::numeric_limits<double>::quiet_NaN();

MatrixXd g_matrix(const SimConfig& c, const Scenario& sc) {
    MatrixXd G(2, 2);
    G << c.omega1, sc.omega2, sc.omega2, sc.omega3;
    return G;
}

void tally(const SimConfig& config, ScenarioResult& res, const std::vector<ReplicationOutcome>& out) {
    res.replications = static_cast<int>(out.size());
    res.failures.fill(0);
    res.failed_replications = 0;
    int incomplete = 0;
    double sc = 0.0, scs = 0.0;
    int nc = 0;
    std::array<double, n_statistics> sum{}, sumsq{};
    std::array<int, n_statistics> used{};
    for (const auto& o : out) {
        if (o.failed) ++res.failed_replications;
        bool complete = true;
        for (int s = 0; s < n_statistics; ++s) {
            if (std::isnan(o.value[s])) {
                ++res.failures[s];
                complete = false;
            } else {
                sum[s] += o.value[s];
                sumsq[s] += o.value[s] * o.value[s];
                ++used[s];
            }
        }
        if (!complete) ++incomplete;
        if (!o.failed) {
            sc += o.C;
            scs += o.C_star;
            ++nc;
        }
    }
    for (int s = 0; s < n_statistics; ++s) {
        const double m = used[s] ? sum[s] / used[s] : nan;
        res.mean[s] = m;
        res.mean_se[s] = used[s] > 1 ? std::sqrt(std::max(0.0, (sumsq[s] - used[s] * m * m) / (used[s] - 1)) / used[s]) : nan;
    }
    res.mean_C = nc ? sc / nc : nan;
    res.mean_C_star = nc ? scs / nc : nan;
    double tc = 0.0, tcs = 0.0;
    int nt = 0;
    for (const auto& o : out) {
        if (std::isnan(o.C_true) || std::isnan(o.C_star_true)) continue;
        tc += o.C_true;
        tcs += o.C_star_true;
        ++nt;
    }
    res.mean_C_true = nt ? tc / nt : nan;
    res.mean_C_star_true = nt ? tcs / nt : nan;
    res.flagged = incomplete > 0.02 * res.replications;

    auto rate_of = [&](int s, double a, auto pvalue) {
        RateEntry e;
        e.statistic = s;
        e.alpha = a;
        for (const auto& o : out) {
            const double pv = pvalue(o);
            if (std::isnan(pv)) continue;
            ++e.used;
            if (pv < a) ++e.rejections;
        }
        const double r = e.used ? static_cast<double>(e.rejections) / e.used : nan;
        e.rate = 100.0 * r;
        e.mc_se = e.used ? 100.0 * std::sqrt(r * (1.0 - r) / e.used) : nan;
        return e;
    };
    res.rates.clear();
    for (int s = 0; s < n_statistics; ++s)
        for (double a : config.alphas)
            res.rates.push_back(rate_of(s, a, [s](const ReplicationOutcome& o) { return o.p_value[s]; }));
    res.alt_rates.clear();
    if (config.compare_variant) {
        for (int k = 0; k < 2; ++k)
            for (double a : config.alphas)
                res.alt_rates.push_back(
                    rate_of(2 * k + 1, a, [k](const ReplicationOutcome& o) { return o.alt_p_value[k]; }));
    }
}

ScenarioResult run_scenario(const SimConfig& config, const Scenario& sc, bool parallel) {
    ScenarioResult res;
    res.scenario = sc;
    res.stream_key = scenario_key(config.master_seed, sc);
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<ReplicationOutcome> out(config.replications);
    if (parallel) {
#pragma omp parallel for schedule(dynamic, 1)
        for (int r = 0; r < config.replications; ++r) out[r] = run_replication(config, sc, res.stream_key, r);
    } else {
        for (int r = 0; r < config.replications; ++r) out[r] = run_replication(config, sc, res.stream_key, r);
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    tally(config, res, out);
    if (config.keep_values) res.outcomes = std::move(out);
    return res;
}

}  // namespace

void SimConfig::validate() const {
    if (scenarios.empty()) fail(ErrorKind::invalid_config, "no scenarios");
    if (replications < 1) fail(ErrorKind::invalid_config, "replications must be at least 1");
    if (alphas.empty()) fail(ErrorKind::invalid_config, "no nominal levels");
    for (double a : alphas)
        if (!(a > 0.0 && a < 1.0)) fail(ErrorKind::invalid_config, "nominal levels must lie in (0, 1)");
    if (beta.size() != 4) fail(ErrorKind::invalid_config, "beta must have four entries");
    if (tau_rule != "cycle") fail(ErrorKind::invalid_config, "unknown tau_rule '" + tau_rule + "'");
    if (dummy_rule != "thirds") fail(ErrorKind::invalid_config, "unknown dummy_rule '" + dummy_rule + "'");
    if (threads < 0) fail(ErrorKind::invalid_config, "threads must be non-negative");
    if (!(omega4 > 0.0)) fail(ErrorKind::invalid_config, "error variance must be positive");
    for (const auto& sc : scenarios) {
        if (sc.N < 3) fail(ErrorKind::invalid_config, "scenarios need at least three units");
        const MatrixXd G = g_matrix(*this, sc);
        Eigen::LLT<MatrixXd> llt;
        if (!try_cholesky(G, llt)) fail(ErrorKind::invalid_config, "random-effects covariance is not positive definite");
    }
}

std::vector<Scenario> preset_scenarios(const std::string& name) {
    if (name == "table1") {
        std::vector<Scenario> s;
        for (int N : {12, 24, 36})
            for (double w2 : {0.0, 0.25})
                for (double w3 : {0.5, 1.0}) s.push_back({N, w2, w3});
        return s;
    }
    fail(ErrorKind::invalid_config, "unknown scenario preset '" + name + "'");
}

std::uint64_t scenario_key(std::uint64_t master_seed, const Scenario& sc) {
    std::uint64_t st = master_seed;
    std::uint64_t k = splitmix64(st);
    for (std::uint64_t v : {static_cast<std::uint64_t>(sc.N), std::bit_cast<std::uint64_t>(sc.omega2),
                            std::bit_cast<std::uint64_t>(sc.omega3)}) {
        st = k ^ v;
        k = splitmix64(st);
    }
    return k;
}

Design simulate_dataset(const SimConfig& c, const Scenario& sc, RandomStream& rng) {
    const MatrixXd L = g_matrix(c, sc).llt().matrixL();
    const double sd = std::sqrt(c.omega4);
    const int N = sc.N;
    std::vector<VectorXd> y(N);
    std::vector<MatrixXd> X(N), Z(N);
    for (int i = 0; i < N; ++i) {
        const int tau = 2 + i % 8;
        const int group = std::min(2, 3 * i / N);
        const double x2 = group == 1 ? 1.0 : 0.0;
        const double x3 = group == 2 ? 1.0 : 0.0;
        MatrixXd& Xi = X[i];
        MatrixXd& Zi = Z[i];
        Xi.resize(tau, 4);
        Zi.resize(tau, 2);
        for (int j = 0; j < tau; ++j) {
            const double t = rng.uniform();
            Xi.row(j) << x2, x3, 1.0, t;  // interest columns first
            Zi.row(j) << 1.0, t;
        }
        const VectorXd b = sample_mvn(VectorXd::Zero(2), L, rng);
        y[i].resize(tau);
        for (int j = 0; j < tau; ++j) {
            const double t = Zi(j, 1);
            y[i](j) = c.beta(0) + c.beta(1) * t + c.beta(2) * x2 + c.beta(3) * x3 + b(0) + b(1) * t +
                      sd * rng.normal();
        }
    }
    CovarianceFamily fam = CovarianceFamily::from_id("unstructured-G", 2);
    Design d = make_design(std::move(y), std::move(X), std::move(Z), 2, fam);
    d.coef_names = {"x2", "x3", "(Intercept)", "t"};
    d.random_names = {"(Intercept)", "t"};
    return d;
}

ReplicationOutcome run_replication(const SimConfig& config, const Scenario& sc, std::uint64_t key, int index) {
    ReplicationOutcome o;
    o.value.fill(nan);
    o.p_value.fill(nan);
    o.C = o.C_star = o.C_true = o.C_star_true = nan;
    o.alt_value.fill(nan);
    o.alt_p_value.fill(nan);
    try {
        RandomStream rng(key, static_cast<std::uint64_t>(index));
        const Design d = simulate_dataset(config, sc, rng);
        const TestReport rep = run_tests(d, VectorXd::Zero(2), config.test);
        const Statistic* stats[n_statistics] = {&rep.LR, &rep.LR_star, &rep.LR_cr, &rep.LR_cr_star};
        for (int s = 0; s < n_statistics; ++s) {
            if (!stats[s]->available) continue;
            o.value[s] = stats[s]->value;
            o.p_value[s] = stats[s]->p_value;
        }
        if (rep.constants_available) {
            o.C = rep.C;
            o.C_star = rep.C_star;
        }
        if (config.true_constants) {
            VectorXd omega(4);
            omega << config.omega1, sc.omega2, sc.omega3, config.omega4;
            const auto bc = bartlett_constants(d, VectorXd::Zero(2), omega, config.test.path, config.test.variant);
            o.C_true = bc.C;
            o.C_star_true = bc.C_star;
        }
        if (config.compare_variant && rep.constants_available) {
            const TraceVariant other =
                config.test.variant == TraceVariant::exact ? TraceVariant::printed : TraceVariant::exact;
            const auto bc = bartlett_constants(d, VectorXd::Zero(2), rep.restricted.omega_hat, config.test.path, other);
            if (rep.LR.available && bc.C_usable) {
                o.alt_value[0] = rep.LR.value / (1.0 + bc.C / 2.0);
                o.alt_p_value[0] = chisq_sf(o.alt_value[0], 2);
            }
            if (rep.LR_cr.available && bc.C_star_usable) {
                o.alt_value[1] = rep.LR_cr.value / (1.0 + bc.C_star / 2.0);
                o.alt_p_value[1] = chisq_sf(o.alt_value[1], 2);
            }
        }
        if (!rep.LR_cr.available) o.failure = rep.LR_cr.reason;
        else if (!rep.LR_star.available) o.failure = rep.LR_star.reason;
    } catch (const std::exception& e) {
        o.failed = true;
        o.failure = e.what();
        o.value.fill(nan);
        o.p_value.fill(nan);
    }
    return o;
}

const RateEntry& ScenarioResult::rate(int statistic, double alpha) const {
    for (const auto& e : rates)
        if (e.statistic == statistic && std::abs(e.alpha - alpha) < 1e-12) return e;
    throw std::out_of_range("no rate for the requested statistic and level");
}

const RateEntry& ScenarioResult::alt_rate(int statistic, double alpha) const {
    for (const auto& e : alt_rates)
        if (e.statistic == statistic && std::abs(e.alpha - alpha) < 1e-12) return e;
    throw std::out_of_range("no alternative-variant rate for the requested statistic and level");
}

SimResult run_size_study(const SimConfig& config) {
    config.validate();
    SimResult res;
    res.config = config;
    const int prev = omp_get_max_threads();
    if (config.threads > 0) omp_set_num_threads(config.threads);
    res.threads_used = omp_get_max_threads();
    for (const auto& sc : config.scenarios) res.scenarios.push_back(run_scenario(config, sc, true));
    omp_set_num_threads(prev);
    return res;
}

SimResult run_size_study_serial(const SimConfig& config) {
    config.validate();
    SimResult res;
    res.config = config;
    res.threads_used = 1;
    for (const auto& sc : config.scenarios) res.scenarios.push_back(run_scenario(config, sc, false));
    return res;
}

std::vector<double> default_quantile_grid() {
    std::vector<double> g;
    for (int k = 1; k <= 19; ++k) g.push_back(0.05 * k);
    g.push_back(0.975);
    g.push_back(0.99);
    return g;
}

double empirical_quantile(std::vector<double> values, double prob) {
    values.erase(std::remove_if(values.begin(), values.end(), [](double v) { return std::isnan(v); }), values.end());
    if (values.empty()) return nan;
    std::sort(values.begin(), values.end());
    const double h = (values.size() - 1) * prob;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - lo) * (values[hi] - values[lo]);
}

std::vector<QuantileRow> quantile_discrepancies(const ScenarioResult& result, int df, const std::vector<double>& probs) {
    std::array<std::vector<double>, n_statistics> vals;
    for (const auto& o : result.outcomes)
        for (int s = 0; s < n_statistics; ++s)
            if (!std::isnan(o.value[s])) vals[s].push_back(o.value[s]);
    for (auto& v : vals) std::sort(v.begin(), v.end());
    std::vector<QuantileRow> rows;
    for (double pr : probs) {
        QuantileRow row;
        row.probability = pr;
        row.asymptotic = chisq_quantile(pr, df);
        for (int s = 0; s < n_statistics; ++s)
            row.discrepancy[s] = (empirical_quantile(vals[s], pr) - row.asymptotic) / row.asymptotic;
        rows.push_back(row);
    }
    return rows;
}

const std::vector<ReferenceRow>& reference_rates() {
    static const std::vector<ReferenceRow> rows = {
        {{12, 0.0, 0.5}, {13.0, 7.6, 4.5, 5.3}, {20.8, 13.1, 9.2, 10.2}},
        {{12, 0.0, 1.0}, {13.4, 7.8, 4.8, 5.9}, {21.7, 13.5, 9.6, 10.8}},
        {{12, 0.25, 0.5}, {11.2, 6.0, 3.4, 4.1}, {19.0, 11.2, 7.5, 8.5}},
        {{12, 0.25, 1.0}, {13.8, 7.9, 5.1, 5.8}, {21.9, 13.9, 9.6, 10.7}},
        {{24, 0.0, 0.5}, {8.3, 5.6, 4.7, 5.0}, {14.6, 10.9, 9.5, 10.0}},
        {{24, 0.0, 1.0}, {8.5, 5.8, 4.9, 5.1}, {14.6, 11.1, 10.1, 10.5}},
        {{24, 0.25, 0.5}, {8.6, 5.7, 4.8, 5.1}, {14.8, 11.1, 9.6, 10.2}},
        {{24, 0.25, 1.0}, {8.7, 6.0, 4.8, 5.1}, {15.0, 11.4, 10.1, 10.6}},
        {{36, 0.0, 0.5}, {6.4, 4.6, 4.2, 4.4}, {12.8, 10.1, 9.5, 9.8}},
        {{36, 0.0, 1.0}, {6.1, 4.9, 4.4, 4.7}, {12.6, 9.8, 9.0, 9.4}},
        {{36, 0.25, 0.5}, {6.7, 4.8, 4.3, 4.6}, {12.4, 10.0, 9.3, 9.6}},
        {{36, 0.25, 1.0}, {6.4, 4.7, 4.3, 4.4}, {12.6, 9.8, 9.1, 9.4}},
    };
    return rows;
}

}  // namespace mlmtest
