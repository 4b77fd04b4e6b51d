#include "farm/simulation.hpp"

#include "farm/error.hpp"
#include "farm/parallel.hpp"
#include "farm/regression.hpp"
#include "farm/rng.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace farm {

namespace {

constexpr std::uint64_t kSimulationSalt = 0x51a7;

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

MatrixXd demean_rows(const MatrixXd& m) { return m.colwise() - m.rowwise().mean(); }

struct FoldErrors {
    double sr = 0.0, pcr = 0.0, farm = 0.0;
};

}  // namespace

void SimulationConfig::validate() const {
    if (T < 10) throw InvalidInput("simulation: T must be at least 10");
    if (n < 2) throw InvalidInput("simulation: n must be at least 2");
    if (r < 1) throw InvalidInput("simulation: r must be positive");
    if (replications < 1) throw InvalidInput("simulation: replications must be positive");
    if (burn_in < 100) throw InvalidInput("simulation: burn_in must be at least 100");
    if (!(v_variance > 0.0)) throw InvalidInput("simulation: v_variance must be positive");
    for (double v : {phi, factor_ar, v_variance, loading_mean_first, loading_sd_first, loading_mean_rest,
                     loading_sd_rest, theta[0], theta[1], theta[2], theta[3]})
        if (!std::isfinite(v)) throw InvalidInput("simulation: parameters must be finite");
}

SimulatedPanel simulate_dgp(const SimulationConfig& config, std::uint64_t replication) {
    config.validate();
    const Index T = config.T, n = config.n, r = config.r, total = config.burn_in + T;
    Rng rng = make_stream(config.seed, replication, kSimulationSalt);
    std::normal_distribution<double> normal;

    MatrixXd lambda(n, r);
    for (Index i = 0; i < n; ++i)
        for (Index k = 0; k < r; ++k)
            lambda(i, k) = i == 0 ? config.loading_mean_first + config.loading_sd_first * normal(rng)
                                  : config.loading_mean_rest + config.loading_sd_rest * normal(rng);
    MatrixXd E(r, total);
    for (Index t = 0; t < total; ++t)
        for (Index k = 0; k < r; ++k) E(k, t) = normal(rng);
    const double v_sd = std::sqrt(config.v_variance);
    MatrixXd V(n, total);
    for (Index t = 0; t < total; ++t)
        for (Index i = 0; i < n; ++i) V(i, t) = v_sd * normal(rng);

    MatrixXd U = V;
    for (Index j = 1; j <= 4 && j < n; ++j) U.row(0) += config.theta[std::size_t(j - 1)] * V.row(j);

    MatrixXd F(r, total), W(n, total);
    F.col(0) = E.col(0);
    W.col(0) = U.col(0);
    for (Index t = 1; t < total; ++t) {
        F.col(t) = config.factor_ar * F.col(t - 1) + E.col(t);
        W.col(t) = config.phi * W.col(t - 1) + U.col(t);
    }

    SimulatedPanel sim{PanelData::make(MatrixXd::Zero(n, T)), F.rightCols(T).transpose(), lambda,
                       U.rightCols(T), W.rightCols(T)};
    sim.panel = PanelData::make(lambda * sim.true_F.transpose() + sim.true_W);
    return sim;
}

Scenario parse_scenario(const std::string& text) {
    const std::string t = lower(text);
    if (t == "known-factors") return Scenario::KnownFactors;
    if (t == "known-r") return Scenario::KnownR;
    if (t == "er") return Scenario::EigenvalueRatio;
    if (t == "ic1") return Scenario::IC1;
    if (t == "ic2") return Scenario::IC2;
    if (t == "ic3") return Scenario::IC3;
    if (t == "ic4") return Scenario::IC4;
    throw InvalidInput("unknown scenario '" + text + "' (expected known-factors, known-r, er, ic1..ic4)");
}

std::string to_string(Scenario scenario) {
    switch (scenario) {
        case Scenario::KnownFactors: return "known-factors";
        case Scenario::KnownR: return "known-r";
        case Scenario::EigenvalueRatio: return "er";
        case Scenario::IC1: return "ic1";
        case Scenario::IC2: return "ic2";
        case Scenario::IC3: return "ic3";
        case Scenario::IC4: return "ic4";
    }
    return "unknown";
}

MatrixXd scenario_residuals(const SimulatedPanel& sim, Scenario scenario, int true_r, int* chosen_r) {
    if (scenario == Scenario::KnownFactors) {
        if (chosen_r) *chosen_r = int(sim.true_F.cols());
        return first_stage_filter_shared(sim.panel, sim.true_F, true).residuals;
    }
    const MatrixXd R = demean_rows(sim.panel.values());
    FactorRule rule = FactorRule::fixed(true_r);
    switch (scenario) {
        case Scenario::EigenvalueRatio: rule.method = FactorMethod::EigenvalueRatio; break;
        case Scenario::IC1: rule.method = FactorMethod::IC1; break;
        case Scenario::IC2: rule.method = FactorMethod::IC2; break;
        case Scenario::IC3: rule.method = FactorMethod::IC3; break;
        case Scenario::IC4: rule.method = FactorMethod::IC4; break;
        default: break;
    }
    const int r = select_factor_count(R, rule).chosen_r;
    if (chosen_r) *chosen_r = r;
    return r > 0 ? pca_factors(R, r).residuals : R;
}

SizePowerResult run_size_power(const SimulationConfig& config, Scenario scenario, const std::vector<double>& levels,
                               const TestConfig& test) {
    config.validate();
    if (levels.empty()) throw InvalidInput("size/power: no significance levels");
    const auto reps = static_cast<std::size_t>(config.replications);
    SizePowerResult out;
    out.scenario = scenario;
    out.T = config.T;
    out.n = config.n;
    out.replications = config.replications;
    out.levels = levels;
    out.p_values.resize(reps);
    out.statistics.resize(reps);
    out.chosen_r.resize(reps);
    out.rejects.assign(reps, std::vector<char>(levels.size(), 0));

    const IndexSet D = IndexSet::row(0, config.n);
    const VectorXd null = VectorXd::Zero(D.size());
    parallel_for(reps, [&](std::size_t b) {
        const SimulatedPanel sim = simulate_dgp(config, b);
        const MatrixXd U = scenario_residuals(sim, scenario, config.r, &out.chosen_r[b]);
        TestConfig tc = test;
        tc.seed = stream_seed(test.seed, b);
        const StructureTestResult res = cov_structure_test(U, D, null, tc);
        out.p_values[b] = res.p_value;
        out.statistics[b] = res.statistic;
        for (std::size_t l = 0; l < levels.size(); ++l) out.rejects[b][l] = res.rejects(levels[l]) ? 1 : 0;
    });
    out.rejection.assign(levels.size(), 0.0);
    for (std::size_t l = 0; l < levels.size(); ++l) {
        double count = 0.0;
        for (const auto& row : out.rejects) count += row[l];
        out.rejection[l] = count / double(reps);
    }
    return out;
}

std::vector<int> factor_count_frequencies(const SimulationConfig& config, const FactorRule& rule) {
    config.validate();
    std::vector<int> chosen(static_cast<std::size_t>(config.replications));
    parallel_for(chosen.size(), [&](std::size_t b) {
        const SimulatedPanel sim = simulate_dgp(config, b);
        chosen[b] = select_factor_count(demean_rows(sim.panel.values()), rule).chosen_r;
    });
    return chosen;
}

InfoGainsResult run_info_gains(const SimulationConfig& config, const FactorRule& rule, int folds,
                               const PathOptions& path) {
    config.validate();
    if (folds < 2 || config.T / folds < 2) throw InvalidInput("info gains: need at least two periods per fold");
    if (config.n < 3) throw InvalidInput("info gains: need at least three series");
    const auto reps = static_cast<std::size_t>(config.replications);
    const Index T = config.T, m = config.n - 1;

    std::vector<FoldErrors> per_rep(reps);
    parallel_for(reps, [&](std::size_t b) {
        const SimulatedPanel sim = simulate_dgp(config, b);
        const MatrixXd& Y = sim.panel.values();
        FoldErrors acc;
        for (int k = 0; k < folds; ++k) {
            const Index lo = T * k / folds, hi = T * (k + 1) / folds;
            const Index n_test = hi - lo, n_train = T - n_test;
            std::vector<Index> train;
            for (Index t = 0; t < T; ++t)
                if (t < lo || t >= hi) train.push_back(t);
            VectorXd y_train(n_train);
            MatrixXd X_train(m, n_train);
            for (Index s = 0; s < n_train; ++s) {
                y_train(s) = Y(0, train[std::size_t(s)]);
                X_train.col(s) = Y.col(train[std::size_t(s)]).tail(m);
            }
            const VectorXd y_test = Y.row(0).segment(lo, n_test).transpose();
            const MatrixXd X_test = Y.block(1, lo, m, n_test);

            // Sparse regression on the raw predictors.
            PathOptions sr_path = path;
            sr_path.lasso.intercept = true;
            const LassoFit sr = lasso_select(LassoProblem(y_train, X_train.transpose(), sr_path.lasso), sr_path);
            const VectorXd sr_pred = (X_test.transpose() * sr.theta).array() + sr.intercept;

            // Principal component regression.
            const VectorXd mu = X_train.rowwise().mean();
            const MatrixXd Xc_train = X_train.colwise() - mu;
            const MatrixXd Xc_test = X_test.colwise() - mu;
            const int r = select_factor_count(Xc_train, rule).chosen_r;
            MatrixXd F_train = MatrixXd::Zero(n_train, 0), F_test = MatrixXd::Zero(n_test, 0);
            MatrixXd U_train = Xc_train, U_test = Xc_test;
            if (r > 0) {
                const FactorEstimate fe = pca_factors(Xc_train, r);
                const MatrixXd& L = fe.loadings;
                F_train = fe.factors;
                F_test = (Xc_test.transpose() * L) * (L.transpose() * L).inverse();
                U_train = fe.residuals;
                U_test = Xc_test - L * F_test.transpose();
            }
            const OlsFit pcr = ols_fit(y_train, F_train, true);
            const VectorXd pcr_pred =
                (F_test * pcr.coefficients.tail(r)).array() + pcr.coefficients(0);

            // Sparse regression of the principal-component residual on the idiosyncratics.
            PathOptions farm_path = path;
            farm_path.lasso.intercept = false;
            farm_path.lasso.standardize = false;
            const LassoFit fp =
                lasso_select(LassoProblem(pcr.residuals, U_train.transpose(), farm_path.lasso), farm_path);
            const VectorXd farm_pred = pcr_pred + U_test.transpose() * fp.theta;

            acc.sr += (y_test - sr_pred).squaredNorm() / double(n_test);
            acc.pcr += (y_test - pcr_pred).squaredNorm() / double(n_test);
            acc.farm += (y_test - farm_pred).squaredNorm() / double(n_test);
        }
        per_rep[b] = {acc.sr / folds, acc.pcr / folds, acc.farm / folds};
    });

    InfoGainsResult out;
    out.T = config.T;
    out.n = config.n;
    out.folds = folds;
    out.factor_rule = to_string(rule);
    double beats_pcr = 0.0, beats_sr = 0.0;
    for (const auto& e : per_rep) {
        out.sr.push_back(e.sr);
        out.pcr.push_back(e.pcr);
        out.farm.push_back(e.farm);
        beats_pcr += e.farm < e.pcr;
        beats_sr += e.farm < e.sr;
    }
    const double R = double(reps);
    out.mean_sr = std::accumulate(out.sr.begin(), out.sr.end(), 0.0) / R;
    out.mean_pcr = std::accumulate(out.pcr.begin(), out.pcr.end(), 0.0) / R;
    out.mean_farm = std::accumulate(out.farm.begin(), out.farm.end(), 0.0) / R;
    out.farm_beats_pcr = beats_pcr / R;
    out.farm_beats_sr = beats_sr / R;
    return out;
}

double factor_rotation_error(const SimulatedPanel& sim) {
    const int r = int(sim.true_F.cols());
    const FactorEstimate fe = pca_factors(demean_rows(sim.panel.values()), r);
    const MatrixXd F = sim.true_F.rowwise() - sim.true_F.colwise().mean();
    const MatrixXd H = rotation_matrix(fe.factors, F, sim.true_Lambda, fe.eigenvalues);
    std::vector<double> err(static_cast<std::size_t>(F.rows()));
    for (Index t = 0; t < F.rows(); ++t)
        err[std::size_t(t)] = (fe.factors.row(t).transpose() - H * F.row(t).transpose()).norm();
    auto mid = err.begin() + std::ptrdiff_t(err.size() / 2);
    std::nth_element(err.begin(), mid, err.end());
    return *mid;
}

std::string content_hash(const std::string& text) {
    const std::string blob = "blob " + std::to_string(text.size()) + '\0' + text;
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(blob.data(), blob.size(), digest, &len, EVP_sha1(), nullptr) != 1)
        throw std::runtime_error("SHA-1 digest failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xf];
    }
    return out;
}

Json to_json(const SimulationConfig& c) {
    return Json{{"T", c.T},
                {"n", c.n},
                {"r", c.r},
                {"phi", c.phi},
                {"theta", std::vector<double>(c.theta.begin(), c.theta.end())},
                {"factor_ar", c.factor_ar},
                {"v_variance", c.v_variance},
                {"loading_first", {c.loading_mean_first, c.loading_sd_first}},
                {"loading_rest", {c.loading_mean_rest, c.loading_sd_rest}},
                {"replications", c.replications},
                {"seed", c.seed},
                {"burn_in", c.burn_in}};
}

void write_size_power_csv(const std::vector<SizePowerResult>& rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    if (rows.empty()) return;
    out << "scenario,T,n";
    for (double level : rows.front().levels) out << ",reject_" << short_number(level);
    out << ",mean_chosen_r,replications\n";
    for (const auto& row : rows) {
        const double mean_r =
            std::accumulate(row.chosen_r.begin(), row.chosen_r.end(), 0.0) / double(row.chosen_r.size());
        out << to_string(row.scenario) << ',' << row.T << ',' << row.n;
        for (double v : row.rejection) out << ',' << format_double(v);
        out << ',' << format_double(mean_r) << ',' << row.replications << '\n';
    }
}

void write_info_gains_csv(const std::vector<InfoGainsResult>& rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "factor_rule,T,n,folds,mse_sr,mse_pcr,mse_farmpredict,farm_beats_pcr,farm_beats_sr,replications\n";
    for (const auto& row : rows)
        out << row.factor_rule << ',' << row.T << ',' << row.n << ',' << row.folds << ',' << format_double(row.mean_sr)
            << ',' << format_double(row.mean_pcr) << ',' << format_double(row.mean_farm) << ','
            << format_double(row.farm_beats_pcr) << ',' << format_double(row.farm_beats_sr) << ','
            << row.sr.size() << '\n';
}

}  // namespace farm
