#pragma once

#include "farm/panel.hpp"

#include <vector>

namespace farm {

/// Least-squares fit. When an intercept is included it is coefficients[0].
struct OlsFit {
    VectorXd coefficients;
    VectorXd residuals;
    VectorXd fitted;
    bool intercept_included = false;
};

/// Relative singular-value floor below which a design is declared rank deficient.
inline constexpr double kRankTolerance = 1e-10;

/// Solved by column-pivoted QR. Throws NumericalError naming the first
/// collinear column (the intercept is reported as "intercept", design columns
/// by zero-based index) when the design is rank deficient.
OlsFit ols_fit(const VectorXd& targets, const MatrixXd& design, bool add_intercept);

struct FirstStage {
    MatrixXd residuals;  // R-hat, n x T
    std::vector<OlsFit> fits;
};

/// Regresses every series on its own T x k_i covariate block. An empty
/// vector means no covariates for any series; an individual block may have
/// zero columns. With no covariates and no intercept the residuals are the
/// raw panel.
FirstStage first_stage_filter(const PanelData& panel, const std::vector<MatrixXd>& covariates,
                              bool add_intercept = true);

/// Same covariates for every series (e.g. observed factors, trends).
FirstStage first_stage_filter_shared(const PanelData& panel, const MatrixXd& covariates,
                                     bool add_intercept = true);

struct ArFit {
    int order = 0;
    double intercept = 0.0;
    VectorXd phi;  // lag-1 first
    double residual_variance = 0.0;
    VectorXd residuals;  // aligned with times p..T-1
};

ArFit ar_fit(const VectorXd& series, int p);

/// recent is ordered most-recent-first and has length p.
double ar_forecast(const ArFit& fit, const VectorXd& recent);

}  // namespace farm
