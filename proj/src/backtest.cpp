#include "farm/backtest.hpp"

#include "farm/error.hpp"
#include "farm/parallel.hpp"
#include "farm/regression.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace farm {

namespace {

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

bool uses(const BacktestConfig& cfg, ForecastMethod m) {
    return std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end();
}

// Penalties selected in the first window, per target, when freezing is on.
struct FrozenPenalties {
    std::vector<double> sr;
    std::vector<double> farm;
};

struct OriginResult {
    // [target][method] in ForecastMethod order.
    std::vector<std::array<double, 4>> forecast;
    int r = -1;
    std::vector<double> sr_xi, farm_xi;
};

// One-step LASSO forecasts for every target from p lags of all rows of Z,
// using only columns first..W-1 of Z.
class LagLasso {
public:
    LagLasso(const MatrixXd& Z, Index first, int p, bool standardize) {
        const MatrixXd sub = Z.rightCols(Z.cols() - first);
        const LaggedDesign design = build_lag_matrix(sub, p);
        rows_ = design.regressors.rows();
        if (rows_ < 2) throw InvalidInput("window too short for the lagged LASSO design");
        targets_ = sub.rightCols(rows_);
        next_ = lag_row(sub, sub.cols(), p);
        mean_ = design.regressors.colwise().mean().transpose();
        MatrixXd Xc = design.regressors.rowwise() - mean_.transpose();
        scale_ = VectorXd::Ones(Xc.cols());
        if (standardize) {
            for (Index j = 0; j < Xc.cols(); ++j) {
                const double sd = std::sqrt(Xc.col(j).squaredNorm() / double(rows_));
                if (sd > 0.0) scale_(j) = sd;
            }
            Xc = Xc * scale_.cwiseInverse().asDiagonal();
        }
        gram_ = Xc.transpose() * Xc / double(rows_);
        xc_ = std::move(Xc);
    }

    // Returns the forecast augmentation and records the penalty used.
    double forecast(Index i, const PathOptions& path, const std::optional<double>& fixed_xi, double* xi_used) const {
        const std::optional<double> xi = fixed_xi ? fixed_xi : path.fixed_xi;
        if (xi && std::isinf(*xi)) {
            if (xi_used) *xi_used = *xi;
            return 0.0;
        }
        const VectorXd y = targets_.row(i).transpose();
        const double y_mean = y.mean();
        const VectorXd yc = y.array() - y_mean;
        LassoOptions opts = path.lasso;
        const auto problem = LassoProblem::from_gram(gram_, xc_.transpose() * yc / double(rows_),
                                                     yc.squaredNorm() / double(rows_), rows_, opts);
        PathOptions po = path;
        po.fixed_xi = xi;
        const LassoFit fit = lasso_select(problem, po);
        if (xi_used) *xi_used = fit.xi;
        const VectorXd theta = fit.theta.cwiseQuotient(scale_);
        const double intercept = y_mean - mean_.dot(theta);
        return intercept + theta.dot(next_);
    }

private:
    Index rows_ = 0;
    MatrixXd targets_;
    VectorXd next_;
    VectorXd mean_;
    VectorXd scale_;
    MatrixXd gram_;
    MatrixXd xc_;
};

std::string where(Index origin, const std::vector<std::string>& time_ids) {
    return "origin " + time_ids[std::size_t(origin)];
}

OriginResult forecast_origin(const MatrixXd& Y, Index tau, const BacktestConfig& cfg,
                             const std::vector<Index>& targets, const std::vector<std::string>& series_ids,
                             const std::vector<std::string>& time_ids, const FrozenPenalties* frozen) {
    const Index n = Y.rows(), W = cfg.window;
    const int p = cfg.p;
    const MatrixXd Yw = Y.block(0, tau - W, n, W);
    const std::size_t nt = targets.size();
    OriginResult out;
    out.forecast.assign(nt, {0.0, 0.0, 0.0, 0.0});
    out.sr_xi.assign(nt, std::numeric_limits<double>::quiet_NaN());
    out.farm_xi = out.sr_xi;

    // AR filter for every series; residuals occupy columns p..W-1.
    MatrixXd R = MatrixXd::Zero(n, W);
    std::vector<double> ar_forecast_value(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        try {
            const ArFit fit = ar_fit(Yw.row(i).transpose(), p);
            R.row(i).tail(W - p) = fit.residuals.transpose();
            VectorXd recent(p);
            for (int l = 0; l < p; ++l) recent(l) = Yw(i, W - 1 - l);
            ar_forecast_value[std::size_t(i)] = ar_forecast(fit, recent);
        } catch (const std::exception& e) {
            throw NumericalError("series " + series_ids[std::size_t(i)] + ", " + where(tau, time_ids) + ": " +
                                 e.what());
        }
    }

    try {
        std::vector<double> sr_aug(nt, 0.0), pcr_aug(nt, 0.0), farm_aug(nt, 0.0);
        if (uses(cfg, ForecastMethod::SR)) {
            const LagLasso lasso(R, p, p, cfg.standardize);
            for (std::size_t k = 0; k < nt; ++k)
                sr_aug[k] = lasso.forecast(targets[k], cfg.path,
                                           frozen ? std::optional<double>(frozen->sr[k]) : std::nullopt,
                                           &out.sr_xi[k]);
        }
        if (uses(cfg, ForecastMethod::PCR) || uses(cfg, ForecastMethod::FarmPredict)) {
            const MatrixXd Rv = R.rightCols(W - p);  // local times p..W-1
            const int r = select_factor_count(Rv, cfg.factor_rule).chosen_r;
            out.r = r;
            // U holds one-step PCR residuals at local times p+1..W-1.
            MatrixXd U = MatrixXd::Zero(n, W);
            if (r == 0) {
                U.rightCols(W - p - 1) = R.rightCols(W - p - 1);
            } else {
                const FactorEstimate fe = pca_factors(Rv, r);
                const MatrixXd& F = fe.factors;  // row s-p holds F at local time s
                const Index L = F.rows();
                if (!cfg.pcr_lead) {
                    U.rightCols(L - 1) = Rv.rightCols(L - 1) - fe.loadings * F.topRows(L - 1).transpose();
                    for (std::size_t k = 0; k < nt; ++k)
                        pcr_aug[k] = fe.loadings.row(targets[k]).dot(F.row(L - 1));
                } else {
                    const MatrixXd lagged = F.topRows(L - 1);
                    std::vector<double> aug(static_cast<std::size_t>(n));
                    for (Index i = 0; i < n; ++i) {
                        const OlsFit fit = ols_fit(Rv.row(i).tail(L - 1).transpose(), lagged, true);
                        U.row(i).tail(L - 1) = fit.residuals.transpose();
                        aug[std::size_t(i)] = fit.coefficients(0) + fit.coefficients.tail(r).dot(F.row(L - 1));
                    }
                    for (std::size_t k = 0; k < nt; ++k) pcr_aug[k] = aug[std::size_t(targets[k])];
                }
            }
            if (uses(cfg, ForecastMethod::FarmPredict)) {
                const LagLasso lasso(U, p + 1, p, cfg.standardize);
                for (std::size_t k = 0; k < nt; ++k)
                    farm_aug[k] = lasso.forecast(targets[k], cfg.path,
                                                 frozen ? std::optional<double>(frozen->farm[k]) : std::nullopt,
                                                 &out.farm_xi[k]);
            }
        }
        for (std::size_t k = 0; k < nt; ++k) {
            const double ar = ar_forecast_value[std::size_t(targets[k])];
            const double pcr = ar + pcr_aug[k];
            out.forecast[k] = {ar, ar + sr_aug[k], pcr, pcr + farm_aug[k]};
        }
    } catch (const InvalidInput& e) {
        throw InvalidInput(where(tau, time_ids) + ": " + e.what());
    } catch (const NumericalError& e) {
        throw NumericalError(where(tau, time_ids) + ": " + e.what());
    }
    return out;
}

}  // namespace

ForecastMethod parse_forecast_method(const std::string& text) {
    const std::string t = lower(text);
    if (t == "ar") return ForecastMethod::AR;
    if (t == "sr") return ForecastMethod::SR;
    if (t == "pcr") return ForecastMethod::PCR;
    if (t == "farmpredict" || t == "farm") return ForecastMethod::FarmPredict;
    throw InvalidInput("unknown forecasting method '" + text + "' (expected ar, sr, pcr, farmpredict)");
}

std::string to_string(ForecastMethod method) {
    switch (method) {
        case ForecastMethod::AR: return "AR";
        case ForecastMethod::SR: return "SR";
        case ForecastMethod::PCR: return "PCR";
        case ForecastMethod::FarmPredict: return "FarmPredict";
    }
    return "unknown";
}

std::vector<std::vector<int>> BacktestReport::ranks() const {
    std::vector<std::vector<int>> out;
    for (Index k = 0; k < mse.rows(); ++k) {
        std::vector<std::size_t> order(methods.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return mse(k, Index(a)) < mse(k, Index(b)); });
        std::vector<int> rank(methods.size());
        for (std::size_t pos = 0; pos < order.size(); ++pos) rank[order[pos]] = int(pos) + 1;
        out.push_back(std::move(rank));
    }
    return out;
}

BacktestReport rolling_backtest(const PanelData& panel, const BacktestConfig& cfg) {
    const Index n = panel.n(), T = panel.T();
    if (cfg.p < 1) throw InvalidInput("backtest: p must be positive");
    if (cfg.methods.empty()) throw InvalidInput("backtest: no methods selected");
    if (cfg.window <= 3 * cfg.p + 4)
        throw InvalidInput("backtest: window must exceed 3p + 4 = " + std::to_string(3 * cfg.p + 4));
    if (Index(cfg.window) + cfg.p >= T)
        throw InvalidInput("backtest: window + p must be below the sample length " + std::to_string(T));
    std::vector<Index> targets = cfg.targets;
    if (targets.empty())
        for (Index i = 0; i < n; ++i) targets.push_back(i);
    for (Index i : targets)
        if (i < 0 || i >= n) throw InvalidInput("backtest: target outside the panel");

    const MatrixXd& Y = panel.values();
    const Index W = cfg.window, origins = T - W;
    BacktestReport rep;
    rep.targets = targets;
    rep.methods = cfg.methods;
    for (Index i : targets) rep.series_ids.push_back(panel.series_ids()[std::size_t(i)]);
    for (Index t = W; t < T; ++t) rep.time_ids.push_back(panel.time_ids()[std::size_t(t)]);
    rep.actual.resize(Index(targets.size()), origins);
    for (std::size_t k = 0; k < targets.size(); ++k) rep.actual.row(Index(k)) = Y.row(targets[k]).tail(origins);

    std::vector<OriginResult> results(static_cast<std::size_t>(origins));
    std::optional<FrozenPenalties> frozen;
    std::size_t start = 0;
    if (cfg.freeze_penalty) {
        results[0] = forecast_origin(Y, W, cfg, targets, panel.series_ids(), panel.time_ids(), nullptr);
        frozen = FrozenPenalties{results[0].sr_xi, results[0].farm_xi};
        start = 1;
    }
    const FrozenPenalties* fp = frozen ? &*frozen : nullptr;
    parallel_for(results.size() - start, [&](std::size_t k) {
        results[k + start] =
            forecast_origin(Y, W + Index(k + start), cfg, targets, panel.series_ids(), panel.time_ids(), fp);
    });

    if (cfg.audit) {
        std::vector<double> diff(results.size(), 0.0);
        parallel_for(results.size(), [&](std::size_t k) {
            const Index tau = W + Index(k);
            MatrixXd perturbed = Y;
            perturbed.rightCols(T - tau).array() += 1e3;
            const OriginResult again =
                forecast_origin(perturbed, tau, cfg, targets, panel.series_ids(), panel.time_ids(),
                                (k == 0 && cfg.freeze_penalty) ? nullptr : fp);
            for (std::size_t t = 0; t < targets.size(); ++t)
                for (int m = 0; m < 4; ++m)
                    diff[k] = std::max(diff[k], std::abs(again.forecast[t][std::size_t(m)] -
                                                         results[k].forecast[t][std::size_t(m)]));
        });
        rep.audit_max_difference = *std::max_element(diff.begin(), diff.end());
    }

    for (ForecastMethod m : cfg.methods) {
        MatrixXd f(Index(targets.size()), origins);
        for (Index o = 0; o < origins; ++o)
            for (std::size_t k = 0; k < targets.size(); ++k)
                f(Index(k), o) = results[std::size_t(o)].forecast[k][std::size_t(m)];
        rep.forecasts.push_back(std::move(f));
    }
    rep.mse.resize(Index(targets.size()), Index(cfg.methods.size()));
    for (std::size_t m = 0; m < cfg.methods.size(); ++m)
        rep.mse.col(Index(m)) = (rep.forecasts[m] - rep.actual).array().square().rowwise().mean();
    for (const auto& r : results) rep.factor_counts.push_back(r.r);
    return rep;
}

RankTable rank_table(const BacktestReport& report, const std::map<std::string, std::string>& groups) {
    for (const auto& [id, label] : groups)
        if (std::find(report.series_ids.begin(), report.series_ids.end(), id) == report.series_ids.end())
            throw InvalidInput("group map names unknown series '" + id + "'");
    const auto ranks = report.ranks();
    const std::size_t M = report.methods.size();

    std::vector<std::string> names;
    std::vector<std::vector<std::size_t>> members;
    for (std::size_t k = 0; k < report.series_ids.size(); ++k) {
        const auto it = groups.find(report.series_ids[k]);
        if (it == groups.end()) continue;
        auto pos = std::find(names.begin(), names.end(), it->second);
        if (pos == names.end()) {
            names.push_back(it->second);
            members.emplace_back();
            pos = names.end() - 1;
        }
        members[std::size_t(pos - names.begin())].push_back(k);
    }
    names.push_back("all");
    members.emplace_back(report.series_ids.size());
    std::iota(members.back().begin(), members.back().end(), 0);

    RankTable table;
    table.methods = report.methods;
    for (std::size_t g = 0; g < names.size(); ++g) {
        RankTable::Group group;
        group.name = names[g];
        group.series = members[g].size();
        group.frequency.assign(M, std::vector<double>(M, 0.0));
        for (std::size_t k : members[g])
            for (std::size_t m = 0; m < M; ++m) group.frequency[m][std::size_t(ranks[k][m] - 1)] += 1.0;
        if (group.series > 0)
            for (auto& row : group.frequency)
                for (auto& v : row) v /= double(group.series);
        table.groups.push_back(std::move(group));
    }
    return table;
}

void write_rank_table_csv(const RankTable& table, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "group,series,method";
    for (std::size_t k = 1; k <= table.methods.size(); ++k) out << ",rank" << k;
    out << '\n';
    for (const auto& g : table.groups)
        for (std::size_t m = 0; m < table.methods.size(); ++m) {
            out << g.name << ',' << g.series << ',' << to_string(table.methods[m]);
            for (double v : g.frequency[m]) out << ',' << format_double(v);
            out << '\n';
        }
}

void write_mse_csv(const BacktestReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "series";
    for (auto m : report.methods) out << ",mse_" << to_string(m);
    out << '\n';
    for (std::size_t k = 0; k < report.series_ids.size(); ++k) {
        out << report.series_ids[k];
        for (Index m = 0; m < report.mse.cols(); ++m) out << ',' << format_double(report.mse(Index(k), m));
        out << '\n';
    }
}

Json to_json(const BacktestReport& report) {
    Json methods = Json::array();
    for (auto m : report.methods) methods.push_back(to_string(m));
    Json series = Json::array();
    for (std::size_t k = 0; k < report.series_ids.size(); ++k) {
        Json per_method = Json::object();
        for (std::size_t m = 0; m < report.methods.size(); ++m) {
            Json errors = Json::array();
            for (Index o = 0; o < report.n_forecasts(); ++o)
                errors.push_back(report.forecasts[m](Index(k), o) - report.actual(Index(k), o));
            per_method[to_string(report.methods[m])] =
                Json{{"mse", report.mse(Index(k), Index(m))}, {"errors", std::move(errors)}};
        }
        series.push_back(Json{{"series", report.series_ids[k]}, {"methods", std::move(per_method)}});
    }
    Json doc{{"methods", std::move(methods)},
             {"n_forecasts", report.n_forecasts()},
             {"forecast_periods", report.time_ids},
             {"factor_counts", report.factor_counts},
             {"series", std::move(series)}};
    if (report.audit_max_difference) doc["audit_max_difference"] = *report.audit_max_difference;
    return doc;
}

}  // namespace farm
