#include "cli.hpp"

#include "farm/backtest.hpp"
#include "farm/covtest.hpp"
#include "farm/error.hpp"
#include "farm/factors.hpp"
#include "farm/json_io.hpp"
#include "farm/parallel.hpp"
#include "farm/pipeline.hpp"
#include "farm/simulation.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

namespace farm {

namespace {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- helpers

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double parse_number(const std::string& text, const std::string& what) {
    const std::string t = trim(text);
    if (t == "inf" || t == "infinity" || t == "Inf") return std::numeric_limits<double>::infinity();
    try {
        std::size_t used = 0;
        const double v = std::stod(t, &used);
        if (used == t.size()) return v;
    } catch (const std::exception&) {
    }
    throw InvalidInput(what + ": '" + text + "' is not a number");
}

std::vector<double> parse_number_list(const std::string& text, const std::string& what) {
    std::vector<double> out;
    for (const auto& item : split(text, ',')) out.push_back(parse_number(item, what));
    if (out.empty()) throw InvalidInput(what + ": empty list");
    return out;
}

/// Series referenced by id, falling back to a 1-based position.
Index resolve_series(const std::vector<std::string>& ids, const std::string& token) {
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (ids[i] == token) return Index(i);
    try {
        std::size_t used = 0;
        const long k = std::stol(token, &used);
        if (used == token.size() && k >= 1 && k <= long(ids.size())) return Index(k - 1);
    } catch (const std::exception&) {
    }
    throw InvalidInput("unknown series '" + token + "'");
}

std::vector<Index> resolve_targets(const std::vector<std::string>& ids, const std::string& spec) {
    std::vector<Index> out;
    if (spec.empty() || spec == "all") return out;
    for (const auto& token : split(spec, ',')) out.push_back(resolve_series(ids, token));
    return out;
}

std::vector<std::string> read_lines(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        line = trim(line);
        if (!line.empty() && line[0] != '#') lines.push_back(line);
    }
    return lines;
}

IndexSet parse_pairs(const std::string& spec, const PanelData& panel) {
    const Index n = panel.n();
    const auto& ids = panel.series_ids();
    if (spec == "offdiag") return IndexSet::offdiag(n);
    if (spec.rfind("row:", 0) == 0) return IndexSet::row(resolve_series(ids, spec.substr(4)), n);
    if (spec.rfind("blocks:", 0) == 0) {
        const fs::path file = spec.substr(7);
        if (file.empty()) throw InvalidInput("blocks: needs a file name");
        const auto lines = read_lines(file);
        std::vector<int> block(static_cast<std::size_t>(n), -1);
        std::map<std::string, int> labels;
        auto label_of = [&](const std::string& s) { return labels.emplace(s, int(labels.size())).first->second; };
        if (!lines.empty() && lines.front().find(',') == std::string::npos) {
            if (Index(lines.size()) != n)
                throw InvalidInput("blocks file lists " + std::to_string(lines.size()) + " labels for " +
                                   std::to_string(n) + " series");
            for (std::size_t i = 0; i < lines.size(); ++i) block[i] = label_of(lines[i]);
        } else {
            for (const auto& line : lines) {
                const auto f = split(line, ',');
                if (f.size() != 2) throw InvalidInput("blocks file: expected 'series,block' in '" + line + "'");
                block[std::size_t(resolve_series(ids, f[0]))] = label_of(f[1]);
            }
            for (Index i = 0; i < n; ++i)
                if (block[std::size_t(i)] < 0) throw InvalidInput("blocks file: series " + ids[std::size_t(i)] + " has no block");
        }
        return IndexSet::across_blocks(block, n);
    }
    const fs::path file = spec;
    if (!fs::exists(file))
        throw InvalidInput("pair spec '" + spec + "' is not offdiag, row:<i>, blocks:<file> or a pair-list file");
    std::vector<IndexSet::Pair> pairs;
    for (const auto& line : read_lines(file)) {
        const auto f = split(line, ',');
        if (f.size() != 2) throw InvalidInput("pair list: expected 'i,j' in '" + line + "'");
        pairs.emplace_back(resolve_series(ids, f[0]), resolve_series(ids, f[1]));
    }
    if (pairs.empty()) throw InvalidInput("pair list is empty");
    return IndexSet::make(std::move(pairs), n);
}

VectorXd parse_null(const std::string& spec, Index d) {
    if (spec == "zero") return VectorXd::Zero(d);
    std::vector<double> values;
    for (const auto& line : read_lines(spec))
        for (const auto& item : split(line, ',')) values.push_back(parse_number(item, "null values"));
    if (Index(values.size()) != d)
        throw InvalidInput("null file has " + std::to_string(values.size()) + " values, the pair set has " +
                           std::to_string(d));
    return Eigen::Map<VectorXd>(values.data(), d);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

/// key = value lines; '#' starts a comment. Keys may carry a "command." prefix.
std::vector<std::pair<std::string, std::string>> read_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open config file " + path.string());
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        out.emplace_back(key, value);
    }
    return out;
}

// ---------------------------------------------------------------- options

struct CommonTest {
    std::string kernel = "bartlett";
    double bandwidth = 0.0;
    int B = 1000;
    std::uint64_t seed = 0;

    void add(CLI::App* app) {
        app->add_option("--kernel", kernel, "HAC kernel: bartlett, parzen or qs")->capture_default_str();
        app->add_option("--bandwidth", bandwidth, "HAC bandwidth; 0 selects floor(T/3)")->capture_default_str();
        app->add_option("--B", B, "Bootstrap draws")->capture_default_str();
        app->add_option("--seed", seed, "Master seed")->capture_default_str();
    }
    TestConfig config() const {
        TestConfig tc;
        tc.kernel = parse_kernel(kernel);
        tc.bandwidth = bandwidth;
        tc.B = B;
        tc.seed = seed;
        return tc;
    }
};

struct SimulateOpts {
    std::string preset;
    int reps = 500;
    std::uint64_t seed = 0;
    std::string T_list;
    std::string n_mult;
    std::string grid = "desk";
    double phi = 0.0;
    int B = 1000;
    std::string kernel = "bartlett";
    std::string factors = "fixed:3";
    int folds = 5;
    int burn_in = 500;
    std::string out_dir = ".";
};

struct TestOpts {
    std::string panel;
    std::string orientation = "rows-are-time";
    std::string pairs = "offdiag";
    std::string null = "zero";
    CommonTest common;
    double level = 0.05;
    std::string xi;
    int grid_size = 100;
    std::string out_dir = ".";
};

struct FactorsOpts {
    std::string panel;
    std::string orientation = "rows-are-time";
    std::string rule = "er";
    int kmax = 0;
    bool demean = true;
    std::string out_dir = ".";
};

struct FarmFitOpts {
    std::string panel;
    std::string orientation = "rows-are-time";
    std::string covariates;
    std::string factors = "er";
    int kmax = 0;
    bool no_intercept = false;
    bool diagnostics = false;
    double level = 0.05;
    std::string diag_kind = "cov";
    std::string force_factors = "auto";
    int max_diag_pairs = 2000;
    std::string xi;
    std::string targets = "all";
    CommonTest common;
    std::string out_dir = ".";
};

struct FarmPredictOpts {
    std::string model;
    std::string series;
    int at_row = 0;
    std::string x, f, u;
    std::string out_dir = ".";
};

struct BacktestOpts {
    std::string panel;
    std::string orientation = "rows-are-time";
    int window = 480;
    int p = 4;
    std::string factors = "er";
    std::string methods = "ar,sr,pcr,farmpredict";
    std::string targets = "all";
    std::string groups;
    std::string xi;
    bool pcr_lead = false;
    bool freeze_penalty = false;
    bool audit = false;
    bool standardize = false;
    std::string out_dir = ".";
};

// ---------------------------------------------------------------- presets

struct Preset {
    std::string kind;  // "size-power" or "info-gains"
    Scenario scenario = Scenario::KnownFactors;
    bool power = false;
};

const std::map<std::string, Preset>& presets() {
    static const std::map<std::string, Preset> table{
        {"table1-panel-a", {"size-power", Scenario::KnownFactors, false}},
        {"table1-panel-b", {"size-power", Scenario::KnownR, false}},
        {"table1-panel-c", {"size-power", Scenario::IC1, false}},
        {"table1-panel-d", {"size-power", Scenario::EigenvalueRatio, false}},
        {"table1-ic2", {"size-power", Scenario::IC2, false}},
        {"table1-ic3", {"size-power", Scenario::IC3, false}},
        {"table1-ic4", {"size-power", Scenario::IC4, false}},
        {"table2-panel-a", {"size-power", Scenario::KnownFactors, true}},
        {"table2-panel-b", {"size-power", Scenario::KnownR, true}},
        {"table2-panel-c", {"size-power", Scenario::EigenvalueRatio, true}},
        {"table2-panel-d", {"size-power", Scenario::IC1, true}},
        {"table3", {"info-gains", Scenario::KnownR, true}},
    };
    return table;
}

// ---------------------------------------------------------------- commands

std::string echo_name(const std::string& command) { return command + ".config.txt"; }

void echo_config(const CLI::App* sub, const fs::path& dir, const std::string& command) {
    write_text(dir / echo_name(command), sub->config_to_str(true, false));
}

fs::path ensure_dir(const std::string& dir) {
    fs::path p = dir.empty() ? fs::path(".") : fs::path(dir);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (!fs::is_directory(p)) throw std::runtime_error("cannot create output directory " + p.string());
    return p;
}

int cmd_simulate(const SimulateOpts& o, const CLI::App* sub, std::ostream& out) {
    const auto it = presets().find(o.preset);
    if (it == presets().end()) {
        std::string names;
        for (const auto& [name, _] : presets()) names += (names.empty() ? "" : ", ") + name;
        throw InvalidInput("unknown preset '" + o.preset + "' (available: " + names + ")");
    }
    const Preset& preset = it->second;
    if (o.grid != "desk" && o.grid != "paper") throw InvalidInput("--grid must be desk or paper");
    std::vector<double> Ts = o.grid == "paper" ? std::vector<double>{100, 500, 700} : std::vector<double>{100, 500};
    std::vector<double> mults = o.grid == "paper" ? std::vector<double>{0.5, 1, 2, 3} : std::vector<double>{0.5, 1};
    if (!o.T_list.empty()) Ts = parse_number_list(o.T_list, "--T");
    if (!o.n_mult.empty()) mults = parse_number_list(o.n_mult, "--n-mult");
    if (o.reps < 1) throw InvalidInput("--reps must be positive");
    const fs::path dir = ensure_dir(o.out_dir);

    SimulationConfig base;
    base.replications = o.reps;
    base.seed = o.seed;
    base.phi = o.phi;
    base.burn_in = o.burn_in;
    if (preset.power) base.theta = SimulationConfig::power_theta;

    TestConfig tc;
    tc.B = o.B;
    tc.kernel = parse_kernel(o.kernel);
    tc.seed = o.seed;
    const std::vector<double> levels{0.10, 0.05, 0.01};
    const FactorRule rule = parse_factor_rule(o.factors);

    Json cells = Json::array();
    std::vector<SizePowerResult> sp_rows;
    std::vector<InfoGainsResult> ig_rows;
    for (double mult : mults)
        for (double T : Ts) {
            SimulationConfig c = base;
            c.T = Index(T);
            c.n = std::max<Index>(2, Index(std::llround(mult * T)));
            c.validate();
            if (preset.kind == "size-power") {
                sp_rows.push_back(run_size_power(c, preset.scenario, levels, tc));
                const auto& r = sp_rows.back();
                cells.push_back(Json{{"T", c.T}, {"n", c.n}, {"rejection", r.rejection}});
            } else {
                ig_rows.push_back(run_info_gains(c, rule, o.folds));
                const auto& r = ig_rows.back();
                cells.push_back(Json{{"T", c.T},
                                     {"n", c.n},
                                     {"mse_sr", r.mean_sr},
                                     {"mse_pcr", r.mean_pcr},
                                     {"mse_farmpredict", r.mean_farm}});
            }
        }

    const fs::path csv = dir / (o.preset + ".csv");
    if (preset.kind == "size-power")
        write_size_power_csv(sp_rows, csv);
    else
        write_info_gains_csv(ig_rows, csv);

    SimulationConfig shown = base;
    Json inputs{{"preset", o.preset},
                {"kind", preset.kind},
                {"scenario", to_string(preset.scenario)},
                {"T", Ts},
                {"n_mult", mults},
                {"dgp", to_json(shown)},
                {"levels", levels},
                {"B", o.B},
                {"kernel", o.kernel},
                {"bandwidth", "floor(T/3)"},
                {"factor_rule", to_string(rule)},
                {"folds", o.folds}};
    Json sidecar{{"inputs", inputs},
                 {"input_hash", content_hash(inputs.dump())},
                 {"seed", o.seed},
                 {"output", csv.filename().string()},
                 {"cells", std::move(cells)}};
    write_json(dir / (o.preset + ".json"), sidecar);
    echo_config(sub, dir, "simulate");

    std::ifstream table(csv);
    out << table.rdbuf();
    return kExitOk;
}

int cmd_test(const TestOpts& o, bool partial, const CLI::App* sub, std::ostream& out) {
    const PanelData panel = load_panel_csv(o.panel, parse_orientation(o.orientation));
    const IndexSet D = parse_pairs(o.pairs, panel);
    const VectorXd null = parse_null(o.null, D.size());
    const TestConfig tc = o.common.config();
    if (!(o.level > 0.0 && o.level < 1.0)) throw InvalidInput("--level must lie in (0, 1)");
    const fs::path dir = ensure_dir(o.out_dir);

    StructureTestResult res;
    if (partial) {
        PartialCovConfig pc;
        pc.path.grid_size = o.grid_size;
        if (!o.xi.empty()) pc.path.fixed_xi = parse_number(o.xi, "--xi");
        res = pcov_structure_test(panel.values(), D, null, tc, pc);
    } else {
        res = cov_structure_test(panel.values(), D, null, tc);
    }
    Json doc = to_json(res);
    doc["level"] = o.level;
    doc["reject"] = res.rejects(o.level);
    const std::string name = partial ? "test_pcov" : "test_cov";
    write_json(dir / (name + ".json"), doc);
    echo_config(sub, dir, partial ? "test-pcov" : "test-cov");
    out << doc.dump(2) << '\n';
    return res.rejects(o.level) ? kExitReject : kExitOk;
}

int cmd_factors(const FactorsOpts& o, const CLI::App* sub, std::ostream& out) {
    const PanelData panel = load_panel_csv(o.panel, parse_orientation(o.orientation));
    FactorRule rule = parse_factor_rule(o.rule);
    rule.kmax = o.kmax;
    const fs::path dir = ensure_dir(o.out_dir);
    MatrixXd R = panel.values();
    if (o.demean) R = R.colwise() - R.rowwise().mean();
    const FactorSelection sel = select_factor_count(R, rule);
    Json doc{{"n", panel.n()}, {"T", panel.T()}, {"demeaned", o.demean}, {"selection", to_json(sel)}};
    const VectorXd ev = gram_eigenvalues(R);
    doc["eigenvalues"] = vector_to_json(ev.head(std::min<Index>(ev.size(), std::max(sel.kmax, sel.chosen_r) + 1)));
    if (sel.chosen_r > 0) {
        const FactorEstimate fe = pca_factors(R, sel.chosen_r);
        std::vector<std::string> names;
        for (int k = 1; k <= sel.chosen_r; ++k) names.push_back("F" + std::to_string(k));
        write_panel_csv(PanelData::make(fe.factors.transpose(), names, panel.time_ids()), dir / "factors.csv",
                        Orientation::RowsAreTime);
        doc["factors_file"] = "factors.csv";
    }
    write_json(dir / "factors.json", doc);
    echo_config(sub, dir, "factors");
    out << doc.dump(2) << '\n';
    return kExitOk;
}

int cmd_farm_fit(const FarmFitOpts& o, const CLI::App* sub, std::ostream& out) {
    const PanelData panel = load_panel_csv(o.panel, parse_orientation(o.orientation));
    FarmConfig cfg;
    cfg.add_intercept = !o.no_intercept;
    cfg.factor_rule = parse_factor_rule(o.factors);
    cfg.factor_rule.kmax = o.kmax;
    cfg.run_diagnostics = o.diagnostics;
    cfg.diagnostic_level = o.level;
    if (o.diag_kind == "cov")
        cfg.diagnostic_kind = DiagnosticKind::Covariance;
    else if (o.diag_kind == "pcov")
        cfg.diagnostic_kind = DiagnosticKind::PartialCovariance;
    else
        throw InvalidInput("--diag-kind must be cov or pcov");
    if (o.force_factors == "on")
        cfg.force_factors = true;
    else if (o.force_factors == "off")
        cfg.force_factors = false;
    else if (o.force_factors != "auto")
        throw InvalidInput("--force-factors must be auto, on or off");
    if (o.max_diag_pairs < 1) throw InvalidInput("--max-diag-pairs must be positive");
    cfg.max_diag_pairs = std::size_t(o.max_diag_pairs);
    cfg.test = o.common.config();
    if (!o.xi.empty()) cfg.path.fixed_xi = parse_number(o.xi, "--xi");
    cfg.targets = resolve_targets(panel.series_ids(), o.targets);

    std::vector<MatrixXd> covariates;
    if (!o.covariates.empty()) {
        const PanelData cov = load_panel_csv(o.covariates, Orientation::RowsAreTime);
        if (cov.T() != panel.T())
            throw InvalidInput("covariates have " + std::to_string(cov.T()) + " periods, the panel has " +
                               std::to_string(panel.T()));
        covariates.assign(std::size_t(panel.n()), cov.values().transpose());
    }
    const fs::path dir = ensure_dir(o.out_dir);
    const FarmModel model = farm_fit(panel, covariates, cfg);
    const Json report = stagewise_report(model);
    write_json(dir / "model.json", model_to_json(model));
    write_json(dir / "report.json", report);
    echo_config(sub, dir, "farm-fit");
    out << report.dump(2) << '\n';
    return kExitOk;
}

int cmd_farm_predict(const FarmPredictOpts& o, const CLI::App* sub, std::ostream& out) {
    const FarmModel model = model_from_json(read_json(o.model));
    if (o.series.empty()) throw InvalidInput("--series is required");
    const Index i = resolve_series(model.series_ids, o.series);
    Json doc{{"series", model.series_ids[std::size_t(i)]}};
    if (o.at_row > 0) {
        if (o.at_row > model.T()) throw InvalidInput("--at-row beyond the sample length " + std::to_string(model.T()));
        const Index t = o.at_row - 1;
        const double pred = farm_predict_in_sample(model, i, t);
        const double resid = model.stage3_residual(i)(t);
        doc["row"] = o.at_row;
        doc["time"] = model.time_ids[std::size_t(t)];
        doc["prediction"] = pred;
        doc["actual"] = model.Y(i, t);
        doc["stage3_residual"] = resid;
        doc["identity_gap"] = std::abs(pred - (model.Y(i, t) - resid));
    } else {
        auto vec = [](const std::string& s) {
            std::vector<double> v;
            for (const auto& item : split(s, ',')) v.push_back(parse_number(item, "input vector"));
            return VectorXd(Eigen::Map<VectorXd>(v.data(), Index(v.size())));
        };
        doc["prediction"] = farm_predict(model, i, vec(o.x), vec(o.f), vec(o.u));
    }
    const fs::path dir = ensure_dir(o.out_dir);
    write_json(dir / "prediction.json", doc);
    echo_config(sub, dir, "farm-predict");
    out << doc.dump(2) << '\n';
    return kExitOk;
}

int cmd_backtest(const BacktestOpts& o, const CLI::App* sub, std::ostream& out) {
    const PanelData panel = load_panel_csv(o.panel, parse_orientation(o.orientation));
    BacktestConfig cfg;
    cfg.window = o.window;
    cfg.p = o.p;
    cfg.factor_rule = parse_factor_rule(o.factors);
    cfg.methods.clear();
    for (const auto& m : split(o.methods, ',')) cfg.methods.push_back(parse_forecast_method(m));
    cfg.targets = resolve_targets(panel.series_ids(), o.targets);
    if (!o.xi.empty()) cfg.path.fixed_xi = parse_number(o.xi, "--xi");
    cfg.pcr_lead = o.pcr_lead;
    cfg.freeze_penalty = o.freeze_penalty;
    cfg.audit = o.audit;
    cfg.standardize = o.standardize;
    std::map<std::string, std::string> groups;
    if (!o.groups.empty()) {
        for (const auto& line : read_lines(o.groups)) {
            const auto f = split(line, ',');
            if (f.size() != 2) throw InvalidInput("groups file: expected 'series,group' in '" + line + "'");
            groups[f[0]] = f[1];
        }
    }
    const fs::path dir = ensure_dir(o.out_dir);
    const BacktestReport report = rolling_backtest(panel, cfg);
    const RankTable table = rank_table(report, groups);
    write_rank_table_csv(table, dir / "ranks.csv");
    write_mse_csv(report, dir / "mse.csv");
    write_json(dir / "backtest.json", to_json(report));
    echo_config(sub, dir, "backtest");
    std::ifstream ranks(dir / "ranks.csv");
    out << ranks.rdbuf();
    if (report.audit_max_difference) out << "audit_max_difference," << format_double(*report.audit_max_difference) << '\n';
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Factor-augmented sparse prediction and covariance structure tests", "farm"};
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.require_subcommand(1);
    app.fallthrough();

    int threads = -1;
    std::string config_file;
    app.add_option("--threads", threads, "Worker threads (0 = all cores; default FARM_THREADS or 1)");
    app.add_option("--config", config_file, "Plain-text key = value file; command-line flags take precedence");

    SimulateOpts sim;
    auto* simulate = app.add_subcommand("simulate", "Size/power and informational-gains experiments");
    simulate->add_option("--preset", sim.preset, "Experiment preset, e.g. table1-panel-a")->required();
    simulate->add_option("--reps", sim.reps, "Replications per cell")->capture_default_str();
    simulate->add_option("--seed", sim.seed, "Master seed")->capture_default_str();
    simulate->add_option("--T", sim.T_list, "Comma-separated sample lengths (overrides the grid)");
    simulate->add_option("--n-mult", sim.n_mult, "Comma-separated n/T ratios (overrides the grid)");
    simulate->add_option("--grid", sim.grid, "desk or paper")->capture_default_str();
    simulate->add_option("--phi", sim.phi, "Idiosyncratic AR coefficient")->capture_default_str();
    simulate->add_option("--B", sim.B, "Bootstrap draws")->capture_default_str();
    simulate->add_option("--kernel", sim.kernel, "HAC kernel")->capture_default_str();
    simulate->add_option("--factors", sim.factors, "Factor rule for table3")->capture_default_str();
    simulate->add_option("--folds", sim.folds, "Cross-validation folds for table3")->capture_default_str();
    simulate->add_option("--burn-in", sim.burn_in, "Discarded initial periods")->capture_default_str();
    simulate->add_option("--out-dir", sim.out_dir, "Output directory")->capture_default_str();

    TestOpts cov, pcov;
    auto add_test = [&](CLI::App* sub, TestOpts& o, bool partial) {
        sub->add_option("panel", o.panel, "Residual panel CSV")->required();
        sub->add_option("--orientation", o.orientation, "rows-are-time or rows-are-series")->capture_default_str();
        sub->add_option("--pairs", o.pairs, "offdiag, row:<i>, blocks:<file> or a pair-list file")
            ->capture_default_str();
        sub->add_option("--null", o.null, "zero or a file of null values")->capture_default_str();
        o.common.add(sub);
        sub->add_option("--level", o.level, "Level for the reject exit code")->capture_default_str();
        sub->add_option("--out-dir", o.out_dir, "Output directory")->capture_default_str();
        if (partial) {
            sub->add_option("--xi", o.xi, "Fixed LASSO penalty (default: BIC path)");
            sub->add_option("--grid-size", o.grid_size, "Penalty grid size")->capture_default_str();
        }
    };
    auto* test_cov = app.add_subcommand("test-cov", "Gaussian-bootstrap test of covariance structure");
    add_test(test_cov, cov, false);
    auto* test_pcov = app.add_subcommand("test-pcov", "Gaussian-bootstrap test of partial-covariance structure");
    add_test(test_pcov, pcov, true);

    FactorsOpts fac;
    auto* factors = app.add_subcommand("factors", "Select the factor count and estimate factors");
    factors->add_option("panel", fac.panel, "Panel CSV")->required();
    factors->add_option("--orientation", fac.orientation, "rows-are-time or rows-are-series")->capture_default_str();
    factors->add_option("--rule", fac.rule, "er, ic1..ic4 or fixed:<r>")->capture_default_str();
    factors->add_option("--kmax", fac.kmax, "Largest factor count considered (0 = default)")->capture_default_str();
    factors->add_option("--demean", fac.demean, "Remove series means first")->capture_default_str();
    factors->add_option("--out-dir", fac.out_dir, "Output directory")->capture_default_str();

    auto* farm = app.add_subcommand("farm", "Fit the three-stage model or predict from it");
    farm->require_subcommand(1);
    FarmFitOpts fit;
    auto* farm_fit_cmd = farm->add_subcommand("fit", "Fit and write model.json and report.json");
    farm_fit_cmd->add_option("panel", fit.panel, "Panel CSV")->required();
    farm_fit_cmd->add_option("--orientation", fit.orientation, "rows-are-time or rows-are-series")
        ->capture_default_str();
    farm_fit_cmd->add_option("--covariates", fit.covariates, "Time-major CSV of covariates shared by all series");
    farm_fit_cmd->add_option("--factors", fit.factors, "er, ic1..ic4 or fixed:<r>")->capture_default_str();
    farm_fit_cmd->add_option("--kmax", fit.kmax, "Largest factor count considered (0 = default)")
        ->capture_default_str();
    farm_fit_cmd->add_flag("--no-intercept", fit.no_intercept, "Drop the first-stage intercept");
    farm_fit_cmd->add_flag("--diagnostics", fit.diagnostics, "Run the stagewise diagonal-covariance tests");
    farm_fit_cmd->add_option("--level", fit.level, "Diagnostic test level")->capture_default_str();
    farm_fit_cmd->add_option("--diag-kind", fit.diag_kind, "cov or pcov")->capture_default_str();
    farm_fit_cmd->add_option("--force-factors", fit.force_factors, "auto, on or off")->capture_default_str();
    farm_fit_cmd->add_option("--max-diag-pairs", fit.max_diag_pairs, "Pair cap for diagnostics when n > 64")
        ->capture_default_str();
    farm_fit_cmd->add_option("--xi", fit.xi, "Fixed stage-3 penalty (default: BIC path; inf disables)");
    farm_fit_cmd->add_option("--targets", fit.targets, "Comma-separated series ids or 1-based positions")
        ->capture_default_str();
    fit.common.add(farm_fit_cmd);
    farm_fit_cmd->add_option("--out-dir", fit.out_dir, "Output directory")->capture_default_str();

    FarmPredictOpts pred;
    auto* farm_predict_cmd = farm->add_subcommand("predict", "Predict from a saved model");
    farm_predict_cmd->add_option("--model", pred.model, "model.json from farm fit")->required();
    farm_predict_cmd->add_option("--series", pred.series, "Target series id or 1-based position")->required();
    farm_predict_cmd->add_option("--at-row", pred.at_row, "1-based in-sample period to reproduce")
        ->capture_default_str();
    farm_predict_cmd->add_option("--x", pred.x, "Covariates (comma-separated)");
    farm_predict_cmd->add_option("--f", pred.f, "Factors (comma-separated)");
    farm_predict_cmd->add_option("--u", pred.u, "Idiosyncratic components of the other series (comma-separated)");
    farm_predict_cmd->add_option("--out-dir", pred.out_dir, "Output directory")->capture_default_str();

    BacktestOpts bt;
    auto* backtest = app.add_subcommand("backtest", "Rolling one-step-ahead forecast comparison");
    backtest->add_option("panel", bt.panel, "Panel CSV")->required();
    backtest->add_option("--orientation", bt.orientation, "rows-are-time or rows-are-series")->capture_default_str();
    backtest->add_option("--window", bt.window, "Rolling window length")->capture_default_str();
    backtest->add_option("--p", bt.p, "Lag order")->capture_default_str();
    backtest->add_option("--factors", bt.factors, "er, ic1..ic4 or fixed:<r>")->capture_default_str();
    backtest->add_option("--methods", bt.methods, "Comma-separated subset of ar,sr,pcr,farmpredict")
        ->capture_default_str();
    backtest->add_option("--targets", bt.targets, "Comma-separated series ids or 1-based positions")
        ->capture_default_str();
    backtest->add_option("--groups", bt.groups, "CSV of series,group lines");
    backtest->add_option("--xi", bt.xi, "Fixed LASSO penalty (default: BIC; inf disables the LASSO terms)");
    backtest->add_flag("--pcr-lead", bt.pcr_lead, "Regress R_{t+1} on F_t for the PCR term");
    backtest->add_flag("--freeze-penalty", bt.freeze_penalty, "Select penalties in the first window only");
    backtest->add_flag("--audit", bt.audit, "Check forecasts do not change when future data are perturbed");
    backtest->add_flag("--standardize", bt.standardize, "Scale LASSO regressors within each window");
    backtest->add_option("--out-dir", bt.out_dir, "Output directory")->capture_default_str();

    // Config file entries become flags placed ahead of the user's own, so the
    // user's flags win under the take-last policy.
    std::vector<std::string> argv_in(args.begin() + (args.empty() ? 0 : 1), args.end());
    try {
        std::string cfg_path;
        for (std::size_t k = 0; k < argv_in.size(); ++k) {
            if (argv_in[k] == "--config" && k + 1 < argv_in.size()) cfg_path = argv_in[k + 1];
            if (argv_in[k].rfind("--config=", 0) == 0) cfg_path = argv_in[k].substr(9);
        }
        if (!cfg_path.empty()) {
            // Insert after the (sub)command words so the options bind to the right app.
            std::size_t insert_at = 0;
            CLI::App* target = &app;
            for (std::size_t k = 0; k < argv_in.size(); ++k) {
                if (argv_in[k].rfind("-", 0) == 0) {
                    if (argv_in[k].find('=') == std::string::npos && k + 1 < argv_in.size() &&
                        (argv_in[k] == "--config" || argv_in[k] == "--threads"))
                        ++k;
                    continue;
                }
                CLI::App* next = nullptr;
                try {
                    next = target->get_subcommand(argv_in[k]);
                } catch (const CLI::OptionNotFound&) {
                }
                if (!next) break;
                target = next;
                insert_at = k + 1;
            }
            std::vector<std::string> injected;
            for (const auto& [raw_key, value] : read_config(cfg_path)) {
                std::string key = raw_key;
                const auto dot = key.rfind('.');
                if (dot != std::string::npos) key = key.substr(dot + 1);
                if (key == "threads") {
                    if (threads < 0) threads = int(parse_number(value, "threads"));
                    continue;
                }
                const CLI::Option* opt = target->get_option_no_throw("--" + key);
                if (!opt || opt->get_positional())
                    throw InvalidInput("config key '" + raw_key + "' is not an option of this command");
                injected.push_back("--" + key + "=" + value);
            }
            argv_in.insert(argv_in.begin() + std::ptrdiff_t(insert_at), injected.begin(), injected.end());
        }
    } catch (const InvalidInput& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    }

    std::vector<std::string> reversed(argv_in.rbegin(), argv_in.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().back()->help());
        for (auto* s : app.get_subcommands())
            for (auto* ss : s->get_subcommands()) out << ss->help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    }

    if (threads < 0) {
        if (const char* env = std::getenv("FARM_THREADS")) {
            try {
                threads = int(parse_number(env, "FARM_THREADS"));
            } catch (const InvalidInput& e) {
                err << "error: " << e.what() << '\n';
                return kExitConfig;
            }
        }
    }
    set_thread_count(threads < 0 ? 1u : unsigned(threads));

    try {
        if (simulate->parsed()) return cmd_simulate(sim, simulate, out);
        if (test_cov->parsed()) return cmd_test(cov, false, test_cov, out);
        if (test_pcov->parsed()) return cmd_test(pcov, true, test_pcov, out);
        if (factors->parsed()) return cmd_factors(fac, factors, out);
        if (farm_fit_cmd->parsed()) return cmd_farm_fit(fit, farm_fit_cmd, out);
        if (farm_predict_cmd->parsed()) return cmd_farm_predict(pred, farm_predict_cmd, out);
        if (backtest->parsed()) return cmd_backtest(bt, backtest, out);
    } catch (const InvalidInput& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    err << "error: no command given\n";
    return kExitConfig;
}

}  // namespace farm
