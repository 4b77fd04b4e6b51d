#include "farm/error.hpp"
#include "farm/lasso.hpp"
#include "farm/regression.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace farm;
using namespace farm::testing;

namespace {

double lasso_objective(const VectorXd& y, const MatrixXd& X, const VectorXd& theta, double xi, double b0 = 0.0) {
    const double T = double(y.size());
    return ((y - X * theta).array() - b0).matrix().squaredNorm() / T + xi * theta.lpNorm<1>();
}

// Proximal gradient (ISTA) with step 1/L on the same objective, no intercept.
VectorXd ista(const VectorXd& y, const MatrixXd& X, double xi, double tol) {
    const double T = double(y.size());
    const MatrixXd G = 2.0 * X.transpose() * X / T;
    const VectorXd c = 2.0 * X.transpose() * y / T;
    const double L = Eigen::SelfAdjointEigenSolver<MatrixXd>(G).eigenvalues().maxCoeff();
    VectorXd theta = VectorXd::Zero(X.cols());
    for (int it = 0; it < 2000000; ++it) {
        const VectorXd z = theta - (G * theta - c) / L;
        VectorXd next(z.size());
        for (Index j = 0; j < z.size(); ++j) next(j) = soft_threshold(z(j), xi / L);
        const double change = (next - theta).cwiseAbs().maxCoeff();
        theta = next;
        if (change < tol) break;
    }
    return theta;
}

}  // namespace

TEST_SUITE("lasso") {

TEST_CASE("penalty at or above xi_max gives zero") {
    const MatrixXd X = randn(30, 5, 1);
    const VectorXd y = randn(30, 2);
    const double xi_max = (2.0 / 30.0 * (X.transpose() * y)).cwiseAbs().maxCoeff();
    LassoProblem problem(y, X);
    CHECK(problem.xi_max() == doctest::Approx(xi_max).epsilon(1e-14));
    CHECK(problem.solve(xi_max).theta.isZero(0.0));
    CHECK(problem.solve(2.0 * xi_max).active_set.empty());
    CHECK_FALSE(problem.solve(0.9 * xi_max).active_set.empty());
}

TEST_CASE("zero penalty reproduces OLS with KKT satisfied") {
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        const Index T = 40 + Index(seed % 20), m = 2 + Index(seed % 6);
        const MatrixXd X = randn(T, m, seed);
        const VectorXd y = X * randn(m, seed + 1000) + 0.5 * randn(T, seed + 2000);
        const LassoFit fit = lasso_fit(y, X, 0.0);
        const OlsFit ols = ols_fit(y, X, false);
        CHECK((fit.theta - ols.coefficients).cwiseAbs().maxCoeff() < 1e-6);
        CHECK(kkt_check(fit, y, X, 1e-6).pass);

        LassoOptions with_intercept;
        with_intercept.intercept = true;
        const LassoFit fit_i = lasso_fit(y, X, 0.0, std::nullopt, with_intercept);
        const OlsFit ols_i = ols_fit(y, X, true);
        CHECK(std::abs(fit_i.intercept - ols_i.coefficients(0)) < 1e-6);
        CHECK((fit_i.theta - ols_i.coefficients.tail(m)).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("beats a dense grid and matches proximal gradient") {
    const MatrixXd X = randn(20, 6, 17);
    const VectorXd y = X * (VectorXd(6) << 1.0, -0.5, 0.0, 0.0, 0.7, 0.0).finished() + 0.3 * randn(20, 18);
    const double xi = 0.1;
    LassoOptions tight;
    tight.conv_tol = 1e-12;
    const LassoFit fit = lasso_fit(y, X, xi, std::nullopt, tight);
    const double best = lasso_objective(y, X, fit.theta, xi);

    const MatrixXd G = X.transpose() * X / 20.0;
    const VectorXd c = X.transpose() * y / 20.0;
    const double yy = y.squaredNorm() / 20.0;
    double grid_min = 1e300;
    VectorXd theta(6);
    int idx[6] = {0, 0, 0, 0, 0, 0};
    for (;;) {
        for (int j = 0; j < 6; ++j) theta(j) = -2.0 + 0.25 * idx[j];
        grid_min = std::min(grid_min, yy - 2.0 * theta.dot(c) + theta.dot(G * theta) + xi * theta.lpNorm<1>());
        int j = 0;
        while (j < 6 && ++idx[j] == 17) idx[j++] = 0;
        if (j == 6) break;
    }
    CHECK(best <= grid_min + 1e-12);

    const VectorXd oracle = ista(y, X, xi, 1e-13);
    CHECK((fit.theta - oracle).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("objective field and monotone sweeps") {
    const MatrixXd X = randn(60, 25, 5);
    const VectorXd y = X.col(0) - X.col(3) + randn(60, 6);
    LassoOptions opts;
    opts.record_objective = true;
    const double xi = 0.05;
    const LassoFit fit = lasso_fit(y, X, xi, std::nullopt, opts);
    CHECK(fit.converged);
    CHECK(std::abs(fit.objective - lasso_objective(y, X, fit.theta, xi)) < 1e-10);
    CHECK(std::abs(fit.mean_squared_residual - (y - X * fit.theta).squaredNorm() / 60.0) < 1e-10);
    REQUIRE(fit.objective_history.size() >= 1);
    for (std::size_t k = 1; k < fit.objective_history.size(); ++k)
        CHECK(fit.objective_history[k] <= fit.objective_history[k - 1] + 1e-12);
    for (Index j = 0; j < 25; ++j)
        CHECK((fit.theta(j) != 0.0) ==
              (std::find(fit.active_set.begin(), fit.active_set.end(), j) != fit.active_set.end()));
}

TEST_CASE("residual mode matches gram mode") {
    const MatrixXd X = randn(50, 2100, 8);
    const VectorXd y = 2.0 * X.col(5) - X.col(1500) + randn(50, 9);
    LassoProblem wide(y, X);
    const double xi = 0.3 * wide.xi_max();
    const LassoFit a = wide.solve(xi);
    const MatrixXd Xs = X.leftCols(2000);
    CHECK(kkt_check(a, y, X, 1e-6).pass);
    CHECK(a.theta(5) > 0.0);
    CHECK(a.theta(1500) < 0.0);
    LassoProblem narrow(y, Xs);
    CHECK(kkt_check(narrow.solve(xi), y, Xs, 1e-6).pass);
}

TEST_CASE("from_gram agrees with the direct problem") {
    const MatrixXd X = randn(80, 12, 10);
    const VectorXd y = X.col(2) + randn(80, 11);
    const LassoProblem direct(y, X);
    const LassoProblem gram = LassoProblem::from_gram(X.transpose() * X / 80.0, X.transpose() * y / 80.0,
                                                      y.squaredNorm() / 80.0, 80);
    for (double xi : {0.0, 0.01, 0.2}) {
        const LassoFit a = direct.solve(xi), b = gram.solve(xi);
        CHECK((a.theta - b.theta).cwiseAbs().maxCoeff() < 1e-10);
        CHECK(std::abs(a.objective - b.objective) < 1e-10);
    }
    CHECK_THROWS_AS(LassoProblem::from_gram(MatrixXd::Identity(3, 3), VectorXd::Zero(2), 1.0, 10), InvalidInput);
}

TEST_CASE("infinite penalty is allowed") {
    const MatrixXd X = randn(30, 4, 12);
    const VectorXd y = randn(30, 13);
    const LassoFit fit = lasso_fit(y, X, std::numeric_limits<double>::infinity());
    CHECK(fit.theta.isZero(0.0));
    CHECK(std::isfinite(fit.objective));
}

TEST_CASE("zero-variance columns are forced out and reported") {
    MatrixXd X = randn(40, 4, 14);
    X.col(2).setZero();
    const VectorXd y = X.col(0) + randn(40, 15);
    const LassoFit fit = lasso_fit(y, X, 0.0);
    CHECK(fit.theta(2) == 0.0);
    CHECK(fit.zero_variance_columns == std::vector<Index>{2});
    LassoOptions ic;
    ic.intercept = true;
    X.col(1).setConstant(4.0);
    const LassoFit fit_i = lasso_fit(y, X, 0.0, std::nullopt, ic);
    CHECK(fit_i.theta(1) == 0.0);
    CHECK(fit_i.zero_variance_columns == std::vector<Index>{1, 2});
}

TEST_CASE("non-convergence is flagged, not thrown") {
    const MatrixXd X = randn(50, 10, 16);
    const VectorXd y = X * VectorXd::Ones(10);
    LassoOptions opts;
    opts.max_iter = 1;
    opts.conv_tol = 1e-15;
    const LassoFit fit = lasso_fit(y, X, 1e-4, std::nullopt, opts);
    CHECK_FALSE(fit.converged);
    CHECK(fit.iterations == 1);
    CHECK_THROWS_AS(lasso_fit(y, X, -1.0), InvalidInput);
    CHECK_THROWS_AS(lasso_fit(y.head(10), X, 0.1), InvalidInput);
}

TEST_CASE("warm start reaches the same solution") {
    const MatrixXd X = randn(60, 15, 19);
    const VectorXd y = X.col(0) - 2.0 * X.col(7) + randn(60, 20);
    const LassoFit cold = lasso_fit(y, X, 0.05);
    const LassoFit warm = lasso_fit(y, X, 0.05, VectorXd(VectorXd::Constant(15, 0.3)));
    CHECK((cold.theta - warm.theta).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("scaling covariance") {
    const MatrixXd X = randn(70, 9, 21);
    const VectorXd y = X.col(4) * 1.5 + randn(70, 22);
    LassoOptions tight;
    tight.conv_tol = 1e-12;
    const double xi = 0.1, c = 3.7;
    const LassoFit a = lasso_fit(y, X, xi, std::nullopt, tight);
    const LassoFit b = lasso_fit(c * y, X, c * xi, std::nullopt, tight);
    CHECK((b.theta - c * a.theta).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("standardisation makes the fit invariant to column scale") {
    const MatrixXd X = randn(70, 6, 23);
    const VectorXd y = X.col(1) - X.col(2) + randn(70, 24);
    LassoOptions opts;
    opts.standardize = true;
    opts.intercept = true;
    opts.conv_tol = 1e-12;
    MatrixXd Xs = X;
    Xs.col(2) *= 10.0;
    const LassoFit a = lasso_fit(y, X, 0.1, std::nullopt, opts);
    const LassoFit b = lasso_fit(y, Xs, 0.1, std::nullopt, opts);
    CHECK(std::abs(b.theta(2) * 10.0 - a.theta(2)) < 1e-8);
    CHECK(std::abs(b.theta(1) - a.theta(1)) < 1e-8);
    CHECK(std::abs(b.intercept - a.intercept) < 1e-8);
}

TEST_CASE("KKT checker") {
    const MatrixXd X = randn(50, 8, 25);
    const VectorXd y = X.col(0) * 2.0 - X.col(3) + 0.5 * randn(50, 26);
    LassoOptions tight;
    tight.conv_tol = 1e-10;
    const LassoFit fit = lasso_fit(y, X, 0.2, std::nullopt, tight);
    CHECK(kkt_check(fit, y, X, 1e-6).pass);
    REQUIRE_FALSE(fit.active_set.empty());
    LassoFit bad = fit;
    bad.theta(fit.active_set.front()) += 0.1;
    CHECK_FALSE(kkt_check(bad, y, X, 1e-6).pass);
}

TEST_CASE("orthogonal design has a closed-form soft-threshold solution") {
    // X'X/T = diag(d1, d2); theta_j = S(c_j, xi/2) / d_j with c = X'y/T.
    const Index T = 4;
    MatrixXd X(T, 2);
    X << 1, 2, 1, -2, -1, 2, -1, -2;
    const VectorXd y = (VectorXd(4) << 3.0, 1.0, -1.0, -2.0).finished();
    const double d1 = 1.0, d2 = 4.0;
    const double c1 = (3.0 + 1.0 + 1.0 + 2.0) / 4.0;          // 1.75
    const double c2 = (6.0 - 2.0 - 2.0 + 4.0) / 4.0;          // 1.5
    const double xi = 3.2;                                     // threshold 1.6: kills c2, keeps c1
    const VectorXd expected = (VectorXd(2) << soft_threshold(c1, xi / 2) / d1, soft_threshold(c2, xi / 2) / d2).finished();
    CHECK(expected(0) == doctest::Approx(0.15));
    CHECK(expected(1) == 0.0);
    const LassoFit fit = lasso_fit(y, X, xi);
    CHECK((fit.theta - expected).cwiseAbs().maxCoeff() < 1e-12);
    LassoFit closed = fit;
    closed.theta = expected;
    CHECK(kkt_check(closed, y, X, 1e-12).pass);
}

TEST_CASE("BIC path grid and empty-model BIC") {
    const MatrixXd X = randn(100, 10, 27);
    const VectorXd y = randn(100, 28).array() + 2.0;
    PathOptions opts;
    opts.lasso.intercept = true;
    const PenaltyPath path = lasso_path_bic(y, X, opts);
    REQUIRE(path.grid.size() == 100);
    CHECK(path.grid.front() == doctest::Approx(LassoProblem(y, X, opts.lasso).xi_max()).epsilon(1e-14));
    CHECK(path.grid.back() == doctest::Approx(path.grid.front() * 1e-3).epsilon(1e-12));
    for (std::size_t k = 1; k < path.grid.size(); ++k) CHECK(path.grid[k] < path.grid[k - 1]);
    const double var = (y.array() - y.mean()).square().mean();
    CHECK(path.bic.front() == doctest::Approx(100.0 * std::log(var)).epsilon(1e-12));
    for (std::size_t k = 0; k < path.bic.size(); ++k) CHECK(path.bic[path.chosen] <= path.bic[k]);
    for (std::size_t k = 0; k < path.chosen; ++k) CHECK(path.bic[k] > path.bic[path.chosen]);
    PathOptions one_point;
    one_point.grid_size = 1;
    CHECK_THROWS_AS(lasso_path_bic(y, X, one_point), InvalidInput);
}

TEST_CASE("warm-started path moves continuously") {
    const MatrixXd X = randn(200, 10, 29);
    const VectorXd y = X.col(0) + 0.5 * X.col(1) + randn(200, 30);
    const PenaltyPath path = lasso_path_bic(y, X);
    const double col_norm = (X.colwise().norm() / std::sqrt(200.0)).maxCoeff();
    for (std::size_t k = 1; k < path.fits.size(); ++k) {
        const double spacing = path.grid[k - 1] - path.grid[k];
        CHECK((path.fits[k].theta - path.fits[k - 1].theta).cwiseAbs().maxCoeff() <= 10.0 * spacing * col_norm);
    }
}

TEST_CASE("BIC recovers a single true predictor") {
    int hits = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const MatrixXd X = randn(200, 10, 1000 + seed);
        const VectorXd y = X.col(0) + 1e-3 * randn(200, 5000 + seed);
        const LassoFit fit = lasso_select(LassoProblem(y, X), PathOptions{});
        hits += fit.active_set == std::vector<Index>{0};
    }
    CHECK(hits >= 90);
}

TEST_CASE("BIC keeps pure noise empty") {
    int empty = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const MatrixXd X = randn(200, 10, 7000 + seed);
        const VectorXd y = randn(200, 9000 + seed);
        empty += lasso_select(LassoProblem(y, X), PathOptions{}).active_set.empty();
    }
    CHECK(empty >= 80);
}

TEST_CASE("fixed penalty bypasses the path") {
    const MatrixXd X = randn(40, 5, 31);
    const VectorXd y = randn(40, 32);
    PathOptions opts;
    opts.fixed_xi = 0.123;
    CHECK(lasso_select(LassoProblem(y, X), opts).xi == 0.123);
}

TEST_CASE("compatibility constant estimate is an upper bound on the identity") {
    const MatrixXd M = MatrixXd::Identity(6, 6);
    const double kappa = compatibility_constant_estimate(M, {0, 1}, 3.0, 2000, 5);
    // For M = I the infimum is 1 (||x||_2 sqrt(s) >= ||x_S||_1), attained at equal support entries.
    CHECK(kappa >= 1.0 - 1e-12);
    CHECK(kappa <= 1.5);
    CHECK_THROWS_AS(compatibility_constant_estimate(M, {}, 1.0, 10, 1), InvalidInput);
    CHECK_THROWS_AS(compatibility_constant_estimate(M, {7}, 1.0, 10, 1), InvalidInput);
}

}
