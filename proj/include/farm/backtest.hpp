#pragma once

#include "farm/factors.hpp"
#include "farm/json_io.hpp"
#include "farm/lasso.hpp"
#include "farm/panel.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace farm {

enum class ForecastMethod { AR, SR, PCR, FarmPredict };
ForecastMethod parse_forecast_method(const std::string& text);
std::string to_string(ForecastMethod method);

// Rolling one-step-ahead comparison. For each target period tau the models
// are fitted on the trailing window Y[tau-window .. tau-1]:
//   AR      own-lag autoregression of order p with intercept;
//   SR      AR + LASSO forecast of the AR residual from p lags of all residuals;
//   PCR     AR + lambda_i'F_{tau-1} from PCA of the AR residual panel;
//   FarmPredict  PCR + LASSO forecast of the PCR residual from p lags of all PCR residuals.
struct BacktestConfig {
    int window = 480;
    int p = 4;
    FactorRule factor_rule{};
    std::vector<ForecastMethod> methods{ForecastMethod::AR, ForecastMethod::SR, ForecastMethod::PCR,
                                        ForecastMethod::FarmPredict};
    std::vector<Index> targets;  // zero-based; empty means every series
    PathOptions path{};          // LASSO path; path.fixed_xi pins the penalty (infinity disables the LASSO terms)
    bool standardize = false;    // scale LASSO regressors to unit variance within each window
    /// Regress R_{t+1} on F_t (with intercept) instead of R_t on F_t.
    bool pcr_lead = false;
    /// Select each LASSO penalty by BIC in the first window only and reuse it.
    bool freeze_penalty = false;
    /// Recompute every forecast after perturbing the data from the target
    /// period onward and record the largest change.
    bool audit = false;
};

struct BacktestReport {
    std::vector<std::string> series_ids;  // one per target
    std::vector<Index> targets;
    std::vector<ForecastMethod> methods;
    std::vector<std::string> time_ids;  // forecast periods
    MatrixXd actual;                    // targets x origins
    std::vector<MatrixXd> forecasts;    // per method, targets x origins
    MatrixXd mse;                       // targets x methods
    std::vector<int> factor_counts;     // per origin
    std::optional<double> audit_max_difference;

    Index n_forecasts() const noexcept { return actual.cols(); }
    /// 1-based rank of each method per target by MSE; ties go to the earlier method.
    std::vector<std::vector<int>> ranks() const;
};

BacktestReport rolling_backtest(const PanelData& panel, const BacktestConfig& config);

struct RankTable {
    std::vector<ForecastMethod> methods;
    struct Group {
        std::string name;
        std::size_t series = 0;
        std::vector<std::vector<double>> frequency;  // [method][rank-1]
    };
    std::vector<Group> groups;  // named groups in first-seen order, then "all"
};

/// groups maps series id to a group label; series without a label only
/// count towards "all". Unknown series ids are rejected.
RankTable rank_table(const BacktestReport& report, const std::map<std::string, std::string>& groups = {});

void write_rank_table_csv(const RankTable& table, const std::filesystem::path& path);
void write_mse_csv(const BacktestReport& report, const std::filesystem::path& path);
Json to_json(const BacktestReport& report);

}  // namespace farm
