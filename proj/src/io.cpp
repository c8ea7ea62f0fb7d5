#include "mlmtest/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "mlmtest/errors.hpp"

namespace mlmtest {

namespace {

// Splits one CSV record; supports double-quoted fields with "" escapes.
std::vector<std::string> split_record(const std::string& line, const std::string& where) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false, was_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"' && cur.empty() && !was_quoted) {
            quoted = was_quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
            was_quoted = false;
        } else {
            cur += c;
        }
    }
    if (quoted) fail(ErrorKind::parse_error, where + ": unterminated quoted field");
    out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

bool parse_double(const std::string& s, double& v) {
    const std::string t = trim(s);
    if (t.empty()) return false;
    const char* first = t.data();
    if (*first == '+') ++first;
    const auto res = std::from_chars(first, t.data() + t.size(), v);
    return res.ec == std::errc() && res.ptr == t.data() + t.size() && std::isfinite(v);
}

std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + '"';
}

// Shortest representation that round-trips exactly.
std::string shortest(double v) {
    if (!std::isfinite(v)) return "NA";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::string fmt3(double v) {
    if (!std::isfinite(v)) return "NA";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

json real(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json vec(const VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(real(v(i)));
    return a;
}

json named(const std::vector<std::string>& names, const VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        a.push_back({{"name", i < static_cast<Eigen::Index>(names.size()) ? names[i] : std::to_string(i)},
                     {"estimate", real(v(i))}});
    }
    return a;
}

json statistic(const Statistic& s) {
    json j = {{"available", s.available}};
    j["value"] = s.available ? real(s.value) : json(nullptr);
    j["p_value"] = s.available ? real(s.p_value) : json(nullptr);
    j["reason"] = s.available ? json(nullptr) : json(s.reason);
    return j;
}

void dump_rec(const json& j, std::ostringstream& os, int indent, int depth) {
    const std::string pad = indent > 0 ? std::string(static_cast<std::size_t>(indent * (depth + 1)), ' ') : "";
    const std::string pad_end = indent > 0 ? std::string(static_cast<std::size_t>(indent * depth), ' ') : "";
    const char* nl = indent > 0 ? "\n" : "";
    switch (j.type()) {
        case json::value_t::object: {
            if (j.empty()) { os << "{}"; return; }
            os << '{' << nl;
            bool first = true;
            for (auto it = j.begin(); it != j.end(); ++it) {
                if (!first) os << ',' << nl;
                first = false;
                os << pad << json(it.key()).dump() << (indent > 0 ? ": " : ":");
                dump_rec(it.value(), os, indent, depth + 1);
            }
            os << nl << pad_end << '}';
            return;
        }
        case json::value_t::array: {
            if (j.empty()) { os << "[]"; return; }
            os << '[' << nl;
            for (std::size_t i = 0; i < j.size(); ++i) {
                if (i) os << ',' << nl;
                os << pad;
                dump_rec(j[i], os, indent, depth + 1);
            }
            os << nl << pad_end << ']';
            return;
        }
        case json::value_t::number_float: {
            const double v = j.get<double>();
            if (!std::isfinite(v)) { os << "null"; return; }
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.17g", v);
            std::string s = buf;
            if (s.find_first_of(".eE") == std::string::npos) s += ".0";
            os << s;
            return;
        }
        default:
            os << j.dump();
    }
}

}  // namespace

LongitudinalDataset parse_csv(std::istream& in, const std::string& unit_column,
                              const std::vector<std::string>& numeric_columns, const std::string& source) {
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) fail(ErrorKind::parse_error, source + ": empty file (header row expected)");
    ++lineno;
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    std::vector<std::string> header = split_record(line, source + ":1");
    for (auto& h : header) h = trim(h);

    auto find_col = [&](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) fail(ErrorKind::missing_column, source + ": column '" + name + "' not found in header");
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t ucol = find_col(unit_column);
    std::vector<std::string> cols;
    for (const auto& c : numeric_columns)
        if (c != unit_column && std::find(cols.begin(), cols.end(), c) == cols.end()) cols.push_back(c);
    std::vector<std::size_t> idx;
    for (const auto& c : cols) idx.push_back(find_col(c));

    LongitudinalDataset data;
    data.unit_column = unit_column;
    data.columns = cols;
    std::map<std::string, std::size_t> slot;
    std::vector<std::vector<std::vector<double>>> rows;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const std::string where = source + ":" + std::to_string(lineno);
        const auto fields = split_record(line, where);
        if (fields.size() != header.size()) {
            fail(ErrorKind::parse_error, where + ": expected " + std::to_string(header.size()) + " fields, found " +
                                             std::to_string(fields.size()));
        }
        const std::string id = trim(fields[ucol]);
        if (id.empty()) fail(ErrorKind::empty_unit, where + ": empty unit identifier in column '" + unit_column + "'");
        std::vector<double> vals(cols.size());
        for (std::size_t c = 0; c < cols.size(); ++c) {
            if (!parse_double(fields[idx[c]], vals[c])) {
                fail(ErrorKind::parse_error, where + ", column " + std::to_string(idx[c] + 1) + " ('" + cols[c] +
                                                 "'): missing or non-numeric value '" + trim(fields[idx[c]]) + "'");
            }
        }
        auto it = slot.find(id);
        if (it == slot.end()) {
            it = slot.emplace(id, rows.size()).first;
            rows.emplace_back();
            data.units.push_back({id, MatrixXd()});
        }
        rows[it->second].push_back(std::move(vals));
    }
    if (data.units.empty()) fail(ErrorKind::empty_unit, source + ": no data rows");
    for (std::size_t u = 0; u < rows.size(); ++u) {
        MatrixXd m(static_cast<Eigen::Index>(rows[u].size()), static_cast<Eigen::Index>(cols.size()));
        for (std::size_t r = 0; r < rows[u].size(); ++r)
            for (std::size_t c = 0; c < cols.size(); ++c)
                m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[u][r][c];
        data.units[u].values = std::move(m);
    }
    return data;
}

LongitudinalDataset ingest_csv(const std::string& path, const std::string& unit_column,
                               const std::vector<std::string>& numeric_columns) {
    std::ifstream f(path);
    if (!f) fail(ErrorKind::parse_error, "cannot open '" + path + "'");
    return parse_csv(f, unit_column, numeric_columns, path);
}

void write_csv(std::ostream& out, const LongitudinalDataset& data) {
    out << quote(data.unit_column);
    for (const auto& c : data.columns) out << ',' << quote(c);
    out << '\n';
    for (const auto& u : data.units) {
        for (Eigen::Index r = 0; r < u.values.rows(); ++r) {
            out << quote(u.id);
            for (Eigen::Index c = 0; c < u.values.cols(); ++c) out << ',' << shortest(u.values(r, c));
            out << '\n';
        }
    }
}

std::vector<std::string> referenced_columns(const ModelSpec& spec) {
    std::vector<std::string> cols{spec.response};
    auto add_term = [&](const std::string& term) {
        std::size_t start = 0;
        while (true) {
            const auto pos = term.find(':', start);
            const std::string f = term.substr(start, pos == std::string::npos ? std::string::npos : pos - start);
            if (!f.empty() && f != "1" && std::find(cols.begin(), cols.end(), f) == cols.end()) cols.push_back(f);
            if (pos == std::string::npos) break;
            start = pos + 1;
        }
    };
    for (const auto& t : spec.fixed) add_term(t);
    for (const auto& t : spec.random) add_term(t);
    return cols;
}

LongitudinalDataset synthetic_dataset(const SimConfig& config, const Scenario& scenario, std::uint64_t seed) {
    RandomStream rng(seed, 0);
    const Design d = simulate_dataset(config, scenario, rng);
    LongitudinalDataset data;
    data.unit_column = "unit";
    data.columns = {"y", "t", "x2", "x3"};
    for (int i = 0; i < d.N(); ++i) {
        MatrixXd v(d.tau[i], 4);
        v.col(0) = d.y[i];
        v.col(1) = d.X[i].col(3);
        v.col(2) = d.X[i].col(0);
        v.col(3) = d.X[i].col(1);
        data.units.push_back({"u" + std::to_string(i + 1), std::move(v)});
    }
    return data;
}

ModelSpec synthetic_spec() {
    ModelSpec s;
    s.response = "y";
    s.fixed = {"1", "t", "x2", "x3"};
    s.random = {"1", "t"};
    s.interest = {"x2", "x3"};
    s.family = "unstructured-G";
    return s;
}

std::string dump_json(const json& j, int indent) {
    std::ostringstream os;
    dump_rec(j, os, indent, 0);
    os << '\n';
    return os.str();
}

json to_json(const FitResult& fit, const Design& design) {
    json j;
    j["coefficients"] = named(design.coef_names, fit.beta_hat);
    j["omega"] = named(design.family.parameter_names(), fit.omega_hat);
    j["family"] = design.family.id();
    j["loglik"] = real(fit.loglik);
    j["converged"] = fit.converged;
    j["iterations"] = fit.iterations;
    j["gradient_norm"] = real(fit.gradient_norm);
    j["boundary"] = fit.boundary;
    j["message"] = fit.message;
    j["n_units"] = design.N();
    j["n_observations"] = design.T();
    return j;
}

FitResult fit_from_json(const json& j) {
    FitResult f;
    VectorXd b(static_cast<Eigen::Index>(j.at("coefficients").size()));
    for (std::size_t i = 0; i < j["coefficients"].size(); ++i) {
        const auto& e = j["coefficients"][i]["estimate"];
        b(static_cast<Eigen::Index>(i)) = e.is_null() ? NAN : e.get<double>();
    }
    VectorXd w(static_cast<Eigen::Index>(j.at("omega").size()));
    for (std::size_t i = 0; i < j["omega"].size(); ++i) {
        const auto& e = j["omega"][i]["estimate"];
        w(static_cast<Eigen::Index>(i)) = e.is_null() ? NAN : e.get<double>();
    }
    f.beta_hat = b;
    f.omega_hat = w;
    f.loglik = j.at("loglik").is_null() ? NAN : j["loglik"].get<double>();
    f.converged = j.at("converged").get<bool>();
    f.iterations = j.at("iterations").get<int>();
    f.gradient_norm = j.at("gradient_norm").is_null() ? NAN : j["gradient_norm"].get<double>();
    f.boundary = j.at("boundary").get<bool>();
    f.message = j.at("message").get<std::string>();
    return f;
}

json to_json(const TestReport& r, const Design& design) {
    json j;
    std::vector<std::string> interest(design.coef_names.begin(), design.coef_names.begin() + design.p);
    j["interest"] = interest;
    j["df"] = r.df;
    j["psi0"] = vec(r.psi0);
    j["statistics"] = {{"LR", statistic(r.LR)},
                       {"LR_star", statistic(r.LR_star)},
                       {"LR_cr", statistic(r.LR_cr)},
                       {"LR_cr_star", statistic(r.LR_cr_star)}};
    j["corrections"] = {{"available", r.constants_available},
                        {"C", r.constants_available ? real(r.C) : json(nullptr)},
                        {"C_star", r.constants_available ? real(r.C_star) : json(nullptr)},
                        {"path", path_name(r.constants.path)},
                        {"variant", variant_name(r.constants.variant)},
                        {"evaluated_at", {{"psi", vec(r.psi0)}, {"omega", vec(r.restricted.omega_hat)}}}};
    j["ml_fit"] = to_json(r.ml, design);
    j["restricted_fit"] = to_json(r.restricted, design);
    if (r.has_adjusted) {
        json a = to_json(r.adjusted, design);
        a["psi_tilde"] = named(interest, r.adjusted.psi);
        a["adjusted_loglik"] = real(r.adjusted.adjusted_loglik);
        a["adjusted_loglik_null"] = real(r.adjusted_null);
        j["adjusted_fit"] = a;
    } else {
        j["adjusted_fit"] = nullptr;
    }
    j["flags"] = r.flags;
    return j;
}

json to_json(const SimResult& res, const std::vector<double>& grid) {
    const auto& c = res.config;
    json j;
    j["config"] = {{"replications", c.replications},
                   {"alphas", c.alphas},
                   {"master_seed", c.master_seed},
                   {"beta", vec(c.beta)},
                   {"omega1", c.omega1},
                   {"omega4", c.omega4},
                   {"tau_rule", c.tau_rule},
                   {"dummy_rule", c.dummy_rule},
                   {"variant", variant_name(c.test.variant)},
                   {"path", path_name(c.test.path)}};
    j["metadata"] = {{"tau_assignment", "tau_i = 2 + (i mod 8), i = 0..N-1"},
                     {"dummy_assignment", "units split into thirds by index: (x2, x3) = (0,0), (1,0), (0,1)"},
                     {"covariates", "t_ij redrawn from U(0,1) in every replication"},
                     {"random_streams", "one stream per (scenario key, replication index)"}};
    json scen = json::array();
    for (const auto& s : res.scenarios) {
        json e;
        e["N"] = s.scenario.N;
        e["omega2"] = s.scenario.omega2;
        e["omega3"] = s.scenario.omega3;
        e["replications"] = s.replications;
        e["failed_replications"] = s.failed_replications;
        e["flagged"] = s.flagged;
        json fails, means;
        for (int k = 0; k < n_statistics; ++k) {
            fails[statistic_names[k]] = s.failures[k];
            means[statistic_names[k]] = {{"mean", real(s.mean[k])}, {"se", real(s.mean_se[k])}};
        }
        e["failures"] = fails;
        e["means"] = means;
        e["mean_C"] = real(s.mean_C);
        e["mean_C_star"] = real(s.mean_C_star);
        json rates = json::array();
        for (const auto& r : s.rates) {
            rates.push_back({{"statistic", statistic_names[r.statistic]},
                             {"alpha", r.alpha},
                             {"rate", real(r.rate)},
                             {"mc_se", real(r.mc_se)},
                             {"rejections", r.rejections},
                             {"used", r.used}});
        }
        e["rates"] = rates;
        json q = json::array();
        if (!s.outcomes.empty()) {
            for (const auto& row : quantile_discrepancies(s, 2, grid)) {
                json d;
                for (int k = 0; k < n_statistics; ++k) d[statistic_names[k]] = real(row.discrepancy[k]);
                q.push_back({{"probability", row.probability}, {"asymptotic_quantile", row.asymptotic}, {"relative_discrepancy", d}});
            }
        }
        e["quantile_discrepancies"] = q;
        scen.push_back(e);
    }
    j["scenarios"] = scen;
    return j;
}

std::string fit_table(const FitResult& fit, const Design& design) {
    std::ostringstream os;
    os << "Maximum likelihood fit (" << design.N() << " units, " << design.T() << " observations, family "
       << design.family.id() << ")\n\n";
    os << std::left << std::setw(24) << "coefficient" << std::right << std::setw(14) << "estimate" << '\n';
    for (int i = 0; i < design.n; ++i) os << std::left << std::setw(24) << design.coef_names[i] << std::right << std::setw(14) << fmt3(fit.beta_hat(i)) << '\n';
    os << '\n' << std::left << std::setw(24) << "variance component" << std::right << std::setw(14) << "estimate" << '\n';
    const auto names = design.family.parameter_names();
    for (int i = 0; i < design.family.dim(); ++i) os << std::left << std::setw(24) << names[i] << std::right << std::setw(14) << fmt3(fit.omega_hat(i)) << '\n';
    os << "\nlog-likelihood " << fmt3(fit.loglik) << "\nconverged " << (fit.converged ? "yes" : "no") << " (" << fit.iterations
       << " iterations)" << (fit.boundary ? "; estimate on the feasibility boundary" : "") << '\n';
    return os.str();
}

std::string test_table(const TestReport& r, const Design& design) {
    std::ostringstream os;
    os << "Test of H0: (";
    for (int i = 0; i < design.p; ++i) os << (i ? ", " : "") << design.coef_names[i];
    os << ") = (";
    for (int i = 0; i < design.p; ++i) os << (i ? ", " : "") << fmt3(r.psi0(i));
    os << "), df = " << r.df << "\n\n";
    os << std::left << std::setw(10) << "statistic" << std::right << std::setw(12) << "value" << std::setw(12) << "p-value" << "  note\n";
    const std::pair<const char*, const Statistic*> rows[] = {{"LR", &r.LR}, {"LR*", &r.LR_star}, {"LR_CR", &r.LR_cr}, {"LR*_CR", &r.LR_cr_star}};
    for (const auto& [name, s] : rows) {
        os << std::left << std::setw(10) << name << std::right;
        if (s->available) os << std::setw(12) << fmt3(s->value) << std::setw(12) << fmt3(s->p_value) << '\n';
        else os << std::setw(12) << "NA" << std::setw(12) << "NA" << "  " << s->reason << '\n';
    }
    os << "\nC = " << (r.constants_available ? fmt3(r.C) : "NA") << ", C* = " << (r.constants_available ? fmt3(r.C_star) : "NA") << '\n';
    os << "\nMaximum likelihood estimates\n";
    for (int i = 0; i < design.n; ++i) os << "  " << std::left << std::setw(22) << design.coef_names[i] << std::right << std::setw(12) << fmt3(r.ml.beta_hat(i)) << '\n';
    const auto names = design.family.parameter_names();
    for (int i = 0; i < design.family.dim(); ++i) os << "  " << std::left << std::setw(22) << names[i] << std::right << std::setw(12) << fmt3(r.ml.omega_hat(i)) << '\n';
    if (r.has_adjusted) {
        os << "\nAdjusted profile maximum likelihood estimates\n";
        for (int i = 0; i < design.p; ++i) os << "  " << std::left << std::setw(22) << design.coef_names[i] << std::right << std::setw(12) << fmt3(r.adjusted.psi(i)) << '\n';
        for (int i = 0; i < design.family.dim(); ++i) os << "  " << std::left << std::setw(22) << names[i] << std::right << std::setw(12) << fmt3(r.adjusted.omega_hat(i)) << '\n';
    }
    if (!r.flags.empty()) {
        os << "\nflags:";
        for (const auto& f : r.flags) os << ' ' << f;
        os << '\n';
    }
    return os.str();
}

std::string simulation_table(const SimResult& res) {
    std::ostringstream os;
    os << "Null rejection rates (%), " << res.config.replications << " replications per scenario\n\n";
    os << std::setw(4) << "N" << std::setw(8) << "omega2" << std::setw(8) << "omega3";
    for (double a : res.config.alphas) {
        os << "  |";
        for (const char* n : statistic_names) os << std::setw(8) << n;
        os << "  (alpha=" << fmt3(a) << ")";
    }
    os << "  fail\n";
    for (const auto& s : res.scenarios) {
        os << std::setw(4) << s.scenario.N << std::setw(8) << fmt3(s.scenario.omega2) << std::setw(8) << fmt3(s.scenario.omega3);
        for (double a : res.config.alphas) {
            os << "  |";
            for (int k = 0; k < n_statistics; ++k) os << std::setw(8) << fmt3(s.rate(k, a).rate);
            os << std::string(15, ' ');
        }
        int worst = *std::max_element(s.failures.begin(), s.failures.end());
        os << "  " << worst << (s.flagged ? " (flagged)" : "") << '\n';
    }
    return os.str();
}

std::string rates_csv(const SimResult& res) {
    std::ostringstream os;
    os << "N,omega2,omega3,statistic,alpha,rate,mc_se,rejections,used,failures\n";
    for (const auto& s : res.scenarios) {
        for (const auto& r : s.rates) {
            os << s.scenario.N << ',' << shortest(s.scenario.omega2) << ',' << shortest(s.scenario.omega3) << ','
               << statistic_names[r.statistic] << ',' << shortest(r.alpha) << ',' << shortest(r.rate) << ','
               << shortest(r.mc_se) << ',' << r.rejections << ',' << r.used << ',' << s.failures[r.statistic] << '\n';
        }
    }
    return os.str();
}

std::string quantiles_csv(const SimResult& res, const std::vector<double>& grid) {
    std::ostringstream os;
    os << "N,omega2,omega3,asymptotic_quantile,statistic,relative_discrepancy\n";
    for (const auto& s : res.scenarios) {
        if (s.outcomes.empty()) continue;
        for (const auto& row : quantile_discrepancies(s, 2, grid)) {
            for (int k = 0; k < n_statistics; ++k) {
                os << s.scenario.N << ',' << shortest(s.scenario.omega2) << ',' << shortest(s.scenario.omega3) << ','
                   << shortest(row.asymptotic) << ',' << statistic_names[k] << ',' << shortest(row.discrepancy[k]) << '\n';
            }
        }
    }
    return os.str();
}

}  // namespace mlmtest
