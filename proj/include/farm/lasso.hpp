#pragma once

#include "farm/panel.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace farm {

// LASSO with the loss scaled by 1/T:
//
//     (1/T) ||y - b0 - X theta||^2 + xi ||theta||_1
//
// The intercept b0 is optional and never penalised. Solved by cyclic
// coordinate descent with soft-thresholding. Small designs (m <= 2000
// columns) run on the Gram matrix; larger ones update a residual vector.

struct LassoOptions {
    double conv_tol = 1e-8;  // on the largest coefficient change in a sweep
    int max_iter = 10000;    // sweeps
    bool intercept = false;
    bool standardize = false;  // scale columns to unit variance before penalising
    bool record_objective = false;
};

struct LassoFit {
    VectorXd theta;
    double xi = 0.0;
    double intercept = 0.0;
    std::vector<Index> active_set;
    double objective = 0.0;
    double mean_squared_residual = 0.0;  // (1/T) ||y - b0 - X theta||^2
    int iterations = 0;
    bool converged = false;
    std::vector<Index> zero_variance_columns;
    std::vector<double> objective_history;  // one entry per sweep when recorded
};

/// Precomputed sufficient statistics for repeated solves on one (y, X).
class LassoProblem {
public:
    LassoProblem(const VectorXd& y, const MatrixXd& X, const LassoOptions& options = {});

    /// Build from cross products of already centred data:
    /// gram = X'X/T, xty = X'y/T, yy = y'y/T. No intercept, no scaling.
    static LassoProblem from_gram(MatrixXd gram, VectorXd xty, double yy, Index T,
                                  const LassoOptions& options = {});

    /// Smallest penalty at which theta = 0: max_j |(2/T) X_j'y|.
    double xi_max() const;

    LassoFit solve(double xi, const VectorXd* warm_start = nullptr) const;

    /// (1/T) ||y - b0 - X theta||^2 for the fitted theta on the working scale.
    double mean_squared_residual(const VectorXd& working_theta) const;

    Index observations() const noexcept { return T_; }
    Index columns() const noexcept { return m_; }
    const LassoOptions& options() const noexcept { return options_; }

private:
    LassoProblem() = default;
    void finish_setup();
    LassoFit finalize(VectorXd working_theta, double xi, int iterations, bool converged,
                      std::vector<double> history) const;

    LassoOptions options_;
    Index T_ = 0;
    Index m_ = 0;
    bool use_gram_ = true;
    MatrixXd gram_;   // m x m, working scale
    MatrixXd xc_;     // T x m centred/scaled design (residual mode only)
    VectorXd yc_;     // centred target (residual mode only)
    VectorXd xty_;
    VectorXd diag_;
    double yy_ = 0.0;
    double y_mean_ = 0.0;
    VectorXd x_mean_;
    VectorXd scale_;  // working column = raw column / scale
    std::vector<Index> zero_variance_;
};

LassoFit lasso_fit(const VectorXd& y, const MatrixXd& X, double xi,
                   const std::optional<VectorXd>& warm_start = std::nullopt,
                   const LassoOptions& options = {});

struct PathOptions {
    int grid_size = 100;
    double xi_min_ratio = 1e-3;
    LassoOptions lasso{};
    std::optional<double> fixed_xi;  // bypasses the BIC search
};

/// Log-spaced penalties from xi_max down to xi_max * xi_min_ratio, solved
/// with warm starts. BIC(xi) = T log(RSS/T) + |active| log T; the minimiser
/// is chosen, ties going to the larger penalty.
struct PenaltyPath {
    std::vector<double> grid;
    std::vector<LassoFit> fits;
    std::vector<double> bic;
    std::size_t chosen = 0;

    const LassoFit& best() const { return fits.at(chosen); }
};

PenaltyPath lasso_path_bic(const LassoProblem& problem, const PathOptions& options = {});
PenaltyPath lasso_path_bic(const VectorXd& y, const MatrixXd& X, const PathOptions& options = {});

/// Fit at the BIC-chosen or fixed penalty, whichever options selects.
LassoFit lasso_select(const LassoProblem& problem, const PathOptions& options);

struct KktReport {
    bool pass = false;
    double worst_violation = 0.0;
};

/// Checks stationarity of the objective at fit.theta on the raw scale.
KktReport kkt_check(const LassoFit& fit, const VectorXd& y, const MatrixXd& X, double tol);

inline double soft_threshold(double z, double gamma) {
    if (z > gamma) return z - gamma;
    if (z < -gamma) return z + gamma;
    return 0.0;
}

/// Random-search upper estimate of the compatibility constant
///   inf { sqrt(x'Mx) sqrt(|S|) / ||x_S||_1 : ||x_{S^c}||_1 <= zeta ||x_S||_1 }.
/// Intended for tiny diagnostic instances only.
double compatibility_constant_estimate(const MatrixXd& M, const std::vector<Index>& support, double zeta,
                                       int samples, std::uint64_t seed);

}  // namespace farm
