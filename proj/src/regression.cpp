#include "farm/regression.hpp"

#include "farm/error.hpp"
#include "farm/parallel.hpp"

#include <Eigen/QR>

namespace farm {

OlsFit ols_fit(const VectorXd& targets, const MatrixXd& design, bool add_intercept) {
    const Index T = targets.size();
    if (design.rows() != T) throw InvalidInput("ols_fit: design rows do not match target length");
    const Index offset = add_intercept ? 1 : 0;
    const Index k = design.cols() + offset;

    OlsFit fit;
    fit.intercept_included = add_intercept;
    if (k == 0) {
        fit.coefficients.resize(0);
        fit.fitted = VectorXd::Zero(T);
        fit.residuals = targets;
        return fit;
    }
    if (T <= k)
        throw InvalidInput("ols_fit: need more observations (" + std::to_string(T) + ") than regressors (" +
                           std::to_string(k) + ")");

    MatrixXd X(T, k);
    if (add_intercept) X.col(0).setOnes();
    X.rightCols(design.cols()) = design;

    Eigen::ColPivHouseholderQR<MatrixXd> qr(X);
    qr.setThreshold(kRankTolerance);
    if (qr.rank() < k) {
        const Index col = qr.colsPermutation().indices()(qr.rank());
        const std::string name =
            (add_intercept && col == 0) ? std::string("intercept") : "column " + std::to_string(col - offset);
        throw NumericalError("ols_fit: design is rank deficient; " + name + " is collinear with the others");
    }
    fit.coefficients = qr.solve(targets);
    fit.fitted = X * fit.coefficients;
    fit.residuals = targets - fit.fitted;
    return fit;
}

namespace {

FirstStage filter_impl(const PanelData& panel, const std::function<const MatrixXd&(Index)>& block,
                       bool add_intercept) {
    const Index n = panel.n(), T = panel.T();
    FirstStage out;
    out.residuals.resize(n, T);
    out.fits.resize(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        const MatrixXd& X = block(Index(i));
        if (X.rows() != T)
            throw InvalidInput("covariates for series " + panel.series_ids()[i] + " have " +
                               std::to_string(X.rows()) + " rows, expected " + std::to_string(T));
        try {
            out.fits[i] = ols_fit(panel.values().row(Index(i)).transpose(), X, add_intercept);
        } catch (const NumericalError& e) {
            throw NumericalError("series " + panel.series_ids()[i] + ": " + e.what());
        } catch (const InvalidInput& e) {
            throw InvalidInput("series " + panel.series_ids()[i] + ": " + e.what());
        }
    });
    for (Index i = 0; i < n; ++i) out.residuals.row(i) = out.fits[std::size_t(i)].residuals.transpose();
    return out;
}

}  // namespace

FirstStage first_stage_filter(const PanelData& panel, const std::vector<MatrixXd>& covariates,
                              bool add_intercept) {
    const MatrixXd empty(panel.T(), 0);
    if (!covariates.empty() && static_cast<Index>(covariates.size()) != panel.n())
        throw InvalidInput("first_stage_filter: need one covariate block per series");
    return filter_impl(
        panel,
        [&](Index i) -> const MatrixXd& { return covariates.empty() ? empty : covariates[std::size_t(i)]; },
        add_intercept);
}

FirstStage first_stage_filter_shared(const PanelData& panel, const MatrixXd& covariates,
                                     bool add_intercept) {
    return filter_impl(panel, [&](Index) -> const MatrixXd& { return covariates; }, add_intercept);
}

ArFit ar_fit(const VectorXd& series, int p) {
    const Index T = series.size();
    if (p < 1) throw InvalidInput("ar_fit: order must be positive");
    if (T <= 2 * p + 2)
        throw InvalidInput("ar_fit: " + std::to_string(T) + " observations are too few for order " +
                           std::to_string(p));
    MatrixXd design(T - p, p);
    for (int lag = 1; lag <= p; ++lag) design.col(lag - 1) = series.segment(p - lag, T - p);
    const VectorXd target = series.tail(T - p);

    OlsFit ols;
    try {
        ols = ols_fit(target, design, true);
    } catch (const NumericalError& e) {
        throw NumericalError(std::string("ar_fit: ") + e.what());
    }
    ArFit fit;
    fit.order = p;
    fit.intercept = ols.coefficients(0);
    fit.phi = ols.coefficients.tail(p);
    fit.residuals = ols.residuals;
    fit.residual_variance = ols.residuals.squaredNorm() / double(T - p - p - 1);
    return fit;
}

double ar_forecast(const ArFit& fit, const VectorXd& recent) {
    if (recent.size() != fit.phi.size())
        throw InvalidInput("ar_forecast: expected " + std::to_string(fit.phi.size()) + " recent values, got " +
                           std::to_string(recent.size()));
    return fit.intercept + fit.phi.dot(recent);
}

}  // namespace farm
