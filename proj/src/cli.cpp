#include "mlmtest/cli.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"

#include "mlmtest/errors.hpp"
#include "mlmtest/io.hpp"

namespace mlmtest {

namespace fs = std::filesystem;

namespace {

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> replications;
    std::optional<int> threads;
};

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) fail(ErrorKind::invalid_config, where + " must be a JSON object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key())) fail(ErrorKind::invalid_config, where + ": unknown key '" + it.key() + "'");
    }
}

template <class T>
T get(const json& obj, const std::string& key, const T& fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        fail(ErrorKind::invalid_config, "config key '" + key + "' has the wrong type");
    }
}

template <class T>
T require(const json& obj, const std::string& key) {
    if (!obj.contains(key)) fail(ErrorKind::invalid_config, "config key '" + key + "' is required");
    return get<T>(obj, key, T{});
}

VectorXd to_vector(const std::vector<double>& v) {
    return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail(ErrorKind::invalid_config, "cannot open config file '" + path + "'");
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::parse_error, path + ": " + e.what());
    }
}

fs::path output_dir(const Flags& flags, const json& cfg) {
    const fs::path dir = flags.out ? *flags.out : get<std::string>(cfg, "out", ".");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorKind::invalid_config, "cannot create output directory '" + dir.string() + "': " + ec.message());
    return dir;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::invalid_config, "cannot write '" + path.string() + "'");
    f << content;
    if (!f) fail(ErrorKind::invalid_config, "failed writing '" + path.string() + "'");
}

const std::set<std::string> model_keys{"data", "unit", "response", "fixed", "random", "family", "interest",
                                       "synthetic", "seed", "out"};

struct Model {
    LongitudinalDataset data;
    ModelSpec spec;
    bool synthetic = false;
};

Model load_model(const json& cfg, const Flags& flags, bool need_interest) {
    Model m;
    if (cfg.contains("synthetic")) {
        if (cfg.contains("data")) fail(ErrorKind::invalid_config, "give either 'data' or 'synthetic', not both");
        const json& s = cfg["synthetic"];
        check_keys(s, {"N", "omega1", "omega2", "omega3", "omega4", "beta"}, "synthetic");
        SimConfig sim;
        sim.omega1 = get<double>(s, "omega1", sim.omega1);
        sim.omega4 = get<double>(s, "omega4", sim.omega4);
        if (s.contains("beta")) sim.beta = to_vector(get<std::vector<double>>(s, "beta", {}));
        Scenario sc{get<int>(s, "N", 12), get<double>(s, "omega2", 0.0), get<double>(s, "omega3", 0.5)};
        sim.scenarios = {sc};
        sim.replications = 1;
        sim.validate();
        const std::uint64_t seed = flags.seed ? *flags.seed : get<std::uint64_t>(cfg, "seed", 1);
        m.data = synthetic_dataset(sim, sc, seed);
        m.spec = synthetic_spec();
        m.synthetic = true;
    } else {
        m.spec.response = require<std::string>(cfg, "response");
        m.spec.fixed = require<std::vector<std::string>>(cfg, "fixed");
        m.spec.random = require<std::vector<std::string>>(cfg, "random");
        fs::path data = require<std::string>(cfg, "data");
        if (data.is_relative()) data = fs::path(flags.config).parent_path() / data;
        const std::string unit = require<std::string>(cfg, "unit");
        m.data = ingest_csv(data.string(), unit, referenced_columns(m.spec));
    }
    if (cfg.contains("fixed")) m.spec.fixed = get<std::vector<std::string>>(cfg, "fixed", {});
    if (cfg.contains("random")) m.spec.random = get<std::vector<std::string>>(cfg, "random", {});
    m.spec.family = get<std::string>(cfg, "family", m.spec.family);
    m.spec.interest = get<std::vector<std::string>>(cfg, "interest", m.synthetic ? m.spec.interest : std::vector<std::string>{});
    if (m.spec.interest.empty()) {
        if (need_interest) fail(ErrorKind::invalid_config, "config key 'interest' is required");
        if (!m.spec.fixed.empty()) m.spec.interest = {m.spec.fixed.front()};
    }
    return m;
}

TestOptions test_options(const json& cfg) {
    TestOptions o;
    o.variant = parse_variant(get<std::string>(cfg, "variant", variant_name(o.variant)));
    o.path = parse_path(get<std::string>(cfg, "path", path_name(o.path)));
    o.cox_reid = get<bool>(cfg, "cox_reid", o.cox_reid);
    return o;
}

int cmd_fit(const Flags& flags, std::ostream& out) {
    const json cfg = load_config(flags.config);
    check_keys(cfg, model_keys, flags.config);
    const Model m = load_model(cfg, flags, false);
    const Design design = build_design(m.data, m.spec);
    const fs::path dir = output_dir(flags, cfg);
    const FitResult fit = fit_ml(design);
    if (m.synthetic) {
        std::ostringstream csv;
        write_csv(csv, m.data);
        write_file(dir / "data.csv", csv.str());
    }
    write_file(dir / "fit.json", dump_json(to_json(fit, design)));
    const std::string table = fit_table(fit, design);
    write_file(dir / "fit.txt", table);
    out << table;
    if (!fit.converged) fail(ErrorKind::non_convergence, "maximum likelihood fit did not converge: " + fit.message);
    return 0;
}

int cmd_test(const Flags& flags, std::ostream& out) {
    const json cfg = load_config(flags.config);
    auto keys = model_keys;
    keys.insert({"psi0", "variant", "path", "cox_reid"});
    check_keys(cfg, keys, flags.config);
    const Model m = load_model(cfg, flags, true);
    const Design design = build_design(m.data, m.spec);
    VectorXd psi0 = VectorXd::Zero(design.p);
    if (cfg.contains("psi0")) {
        psi0 = to_vector(get<std::vector<double>>(cfg, "psi0", {}));
        if (psi0.size() != design.p) {
            fail(ErrorKind::invalid_config, "psi0 has " + std::to_string(psi0.size()) + " entries but " +
                                                std::to_string(design.p) + " interest coefficients are listed");
        }
    }
    const TestOptions opts = test_options(cfg);
    const fs::path dir = output_dir(flags, cfg);
    const TestReport rep = run_tests(design, psi0, opts);
    if (m.synthetic) {
        std::ostringstream csv;
        write_csv(csv, m.data);
        write_file(dir / "data.csv", csv.str());
    }
    write_file(dir / "test_report.json", dump_json(to_json(rep, design)));
    const std::string table = test_table(rep, design);
    write_file(dir / "test_report.txt", table);
    out << table;
    return 0;
}

int cmd_simulate(const Flags& flags, std::ostream& out, std::ostream& err) {
    const json cfg = load_config(flags.config);
    check_keys(cfg, {"preset", "scenarios", "replications", "alphas", "seed", "threads", "beta", "omega1", "omega4",
                     "variant", "path", "cox_reid", "keep_values", "quantile_grid", "out"},
               flags.config);
    SimConfig sim;
    if (cfg.contains("preset") && cfg.contains("scenarios")) {
        fail(ErrorKind::invalid_config, "give either 'preset' or 'scenarios', not both");
    }
    if (cfg.contains("preset")) {
        sim.scenarios = preset_scenarios(get<std::string>(cfg, "preset", ""));
    } else if (cfg.contains("scenarios")) {
        const json& list = cfg["scenarios"];
        if (!list.is_array() || list.empty()) fail(ErrorKind::invalid_config, "'scenarios' must be a nonempty array");
        sim.scenarios.clear();
        for (const auto& s : list) {
            check_keys(s, {"N", "omega2", "omega3"}, "scenario");
            sim.scenarios.push_back({require<int>(s, "N"), get<double>(s, "omega2", 0.0), get<double>(s, "omega3", 0.5)});
        }
    } else {
        sim.scenarios = preset_scenarios("table1");
    }
    sim.replications = flags.replications ? *flags.replications : get<int>(cfg, "replications", sim.replications);
    sim.alphas = get<std::vector<double>>(cfg, "alphas", sim.alphas);
    sim.master_seed = flags.seed ? *flags.seed : get<std::uint64_t>(cfg, "seed", sim.master_seed);
    sim.threads = flags.threads ? *flags.threads : get<int>(cfg, "threads", sim.threads);
    if (cfg.contains("beta")) sim.beta = to_vector(get<std::vector<double>>(cfg, "beta", {}));
    sim.omega1 = get<double>(cfg, "omega1", sim.omega1);
    sim.omega4 = get<double>(cfg, "omega4", sim.omega4);
    sim.keep_values = get<bool>(cfg, "keep_values", sim.keep_values);
    sim.test = test_options(cfg);
    const std::vector<double> grid = get<std::vector<double>>(cfg, "quantile_grid", default_quantile_grid());
    for (double p : grid) {
        if (!(p > 0.0 && p < 1.0)) fail(ErrorKind::invalid_config, "quantile_grid entries must lie in (0, 1)");
    }
    if (!sim.keep_values && cfg.contains("quantile_grid")) {
        fail(ErrorKind::invalid_config, "quantile_grid requires keep_values");
    }
    sim.validate();
    const fs::path dir = output_dir(flags, cfg);

    const SimResult res = run_size_study(sim);
    write_file(dir / "sim_result.json", dump_json(to_json(res, grid)));
    write_file(dir / "rates.csv", rates_csv(res));
    write_file(dir / "quantiles.csv", quantiles_csv(res, grid));
    const std::string table = simulation_table(res);
    write_file(dir / "summary.txt", table);
    out << table;
    for (const auto& s : res.scenarios) {
        if (s.flagged) {
            err << "warning: scenario N=" << s.scenario.N << " omega2=" << s.scenario.omega2 << " omega3=" << s.scenario.omega3
                << " has " << *std::max_element(s.failures.begin(), s.failures.end()) << " of " << s.replications
                << " replications without a complete set of statistics\n";
        }
    }
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Corrected likelihood ratio tests for Gaussian mixed linear models", "mlmtest"};
    app.require_subcommand(1);
    Flags flags;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", flags.config, "JSON run configuration")->required();
        sub->add_option("--seed", flags.seed, "random seed (overrides the config)");
        sub->add_option("--out", flags.out, "output directory (overrides the config)");
        sub->add_option("--replications", flags.replications, "Monte Carlo replications per scenario")->check(CLI::PositiveNumber);
        sub->add_option("--threads", flags.threads, "worker threads (0: all available)")->check(CLI::NonNegativeNumber);
    };
    CLI::App* fit = app.add_subcommand("fit", "maximum likelihood fit");
    CLI::App* test = app.add_subcommand("test", "LR, Bartlett-corrected LR and Cox-Reid adjusted tests");
    CLI::App* simulate = app.add_subcommand("simulate", "Monte Carlo size study");
    add_common(fit);
    add_common(test);
    add_common(simulate);

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "mlmtest: " << e.what() << '\n';
        return 2;
    }

    try {
        if (fit->parsed()) return cmd_fit(flags, out);
        if (test->parsed()) return cmd_test(flags, out);
        return cmd_simulate(flags, out, err);
    } catch (const Error& e) {
        err << "mlmtest: " << error_kind_name(e.kind()) << ": " << e.what() << '\n';
        return is_input_error(e.kind()) ? 2 : 3;
    } catch (const json::exception& e) {
        err << "mlmtest: invalid configuration: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "mlmtest: " << e.what() << '\n';
        return 3;
    }
}

}  // namespace mlmtest
