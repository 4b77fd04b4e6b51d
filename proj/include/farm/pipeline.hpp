#pragma once

#include "farm/covtest.hpp"
#include "farm/factors.hpp"
#include "farm/json_io.hpp"
#include "farm/lasso.hpp"
#include "farm/panel.hpp"
#include "farm/regression.hpp"

#include <optional>
#include <string>
#include <vector>

namespace farm {

enum class DiagnosticKind { Covariance, PartialCovariance };

struct FarmConfig {
    bool add_intercept = true;
    FactorRule factor_rule{};
    /// Diagonal-structure tests after stages 1 and 2. When the stage-1 test
    /// does not reject at diagnostic_level, stage 2 is skipped (r = 0).
    bool run_diagnostics = false;
    double diagnostic_level = 0.05;
    DiagnosticKind diagnostic_kind = DiagnosticKind::Covariance;
    std::size_t max_diag_pairs = 2000;  // off-diagonal pairs are subsampled above this (n > 64)
    TestConfig test{};
    /// Overrides the stage-1 decision: true always estimates factors, false never does.
    std::optional<bool> force_factors;
    PathOptions path{};  // stage-3 LASSO; set path.fixed_xi to pin the penalty
    std::vector<Index> targets;  // zero-based; empty means every series
};

/// Condensed record of a diagnostic structure test.
struct DiagnosticSummary {
    std::string stage;
    std::string kind;
    Index d = 0;
    double statistic = 0.0;
    double p_value = 1.0;
    double level = 0.05;
    bool rejected = false;
};

struct TargetModel {
    Index series = 0;
    LassoFit lasso;                // theta over the other n-1 series in index order
    std::vector<Index> predictors; // series index of each theta entry
};

struct FarmModel {
    std::vector<std::string> series_ids;
    std::vector<std::string> time_ids;
    MatrixXd Y;                       // n x T
    bool add_intercept = true;
    std::vector<MatrixXd> covariates; // per series (T x k_i); empty means none
    std::vector<VectorXd> gamma;      // per series, intercept first when included
    MatrixXd stage1_residuals;        // R-hat
    FactorSelection selection;
    FactorEstimate factors;           // r = 0 when skipped
    bool factors_skipped = false;
    std::string skip_reason;
    std::vector<TargetModel> targets;
    std::vector<DiagnosticSummary> diagnostics;

    Index n() const noexcept { return Y.rows(); }
    Index T() const noexcept { return Y.cols(); }
    const TargetModel& target(Index series) const;
    /// Stage-3 residual V-hat_i of a fitted target.
    VectorXd stage3_residual(Index series) const;
};

FarmModel farm_fit(const PanelData& panel, const std::vector<MatrixXd>& covariates, const FarmConfig& config);

/// gamma_i'[1, x] + lambda_i'f + theta_i'u where u holds the other n-1
/// idiosyncratic components in index order.
double farm_predict(const FarmModel& model, Index series, const VectorXd& x_new, const VectorXd& f_new,
                    const VectorXd& u_minus_new);

/// farm_predict evaluated at the in-sample inputs of period t.
double farm_predict_in_sample(const FarmModel& model, Index series, Index t);

/// r, criterion values, per-stage residual variances, diagnostics and active sets.
Json stagewise_report(const FarmModel& model);

Json model_to_json(const FarmModel& model);
FarmModel model_from_json(const Json& doc);

}  // namespace farm
