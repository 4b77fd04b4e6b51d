#include "farm/error.hpp"
#include "farm/regression.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace farm;
using namespace farm::testing;

TEST_SUITE("regression") {

TEST_CASE("exact linear recovery") {
    const MatrixXd X = randn(20, 2, 1);
    const VectorXd beta = (VectorXd(2) << 1.0, -2.0).finished();
    const OlsFit fit = ols_fit(X * beta, X, false);
    CHECK((fit.coefficients - beta).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(fit.residuals.cwiseAbs().maxCoeff() < 1e-12);
    CHECK_FALSE(fit.intercept_included);
}

TEST_CASE("intercept only gives the mean") {
    const VectorXd y = VectorXd::Constant(10, 5.0);
    const OlsFit fit = ols_fit(y, MatrixXd::Zero(10, 0), true);
    REQUIRE(fit.coefficients.size() == 1);
    CHECK(fit.coefficients(0) == doctest::Approx(5.0).epsilon(1e-14));
}

TEST_CASE("agrees with the explicit normal equations") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const MatrixXd X = randn(50, 3, seed);
        const VectorXd y = X * VectorXd::LinSpaced(3, -1.0, 2.0) + 0.3 * randn(50, seed + 100);
        const VectorXd normal = (X.transpose() * X).inverse() * (X.transpose() * y);
        const OlsFit fit = ols_fit(y, X, false);
        CHECK((fit.coefficients - normal).cwiseAbs().maxCoeff() < 1e-8);

        MatrixXd Xi(50, 4);
        Xi << VectorXd::Ones(50), X;
        const VectorXd normal_i = (Xi.transpose() * Xi).inverse() * (Xi.transpose() * y);
        const OlsFit fit_i = ols_fit(y, X, true);
        CHECK((fit_i.coefficients - normal_i).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("residual identities and orthogonality") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const MatrixXd X = randn(40, 4, seed) * 10.0;
        const VectorXd y = randn(40, seed + 7) * 3.0;
        const OlsFit fit = ols_fit(y, X, true);
        MatrixXd Xi(40, 5);
        Xi << VectorXd::Ones(40), X;
        CHECK((y - Xi * fit.coefficients - fit.residuals).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((fit.fitted + fit.residuals - y).cwiseAbs().maxCoeff() < 1e-10);
        const double scale = max_abs(Xi) * max_abs(y) * 40.0;
        CHECK(max_abs(Xi.transpose() * fit.residuals) <= 1e-8 * scale);
    }
}

TEST_CASE("collinear design names the offending column") {
    MatrixXd X = randn(30, 3, 5);
    X.col(2) = X.col(0) + 2.0 * X.col(1);
    try {
        ols_fit(randn(30, 6), X, false);
        FAIL("expected rank deficiency");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("collinear") != std::string::npos);
    }
    MatrixXd Y = randn(30, 2, 5);
    Y.col(1).setConstant(3.0);
    try {
        ols_fit(randn(30, 6), Y, true);
        FAIL("expected rank deficiency");
    } catch (const NumericalError& e) {
        const std::string msg = e.what();
        CHECK((msg.find("intercept") != std::string::npos || msg.find("column 1") != std::string::npos));
    }
    CHECK_THROWS_AS(ols_fit(randn(3, 1), randn(3, 3, 2), true), InvalidInput);
}

TEST_CASE("first stage with an intercept demeans") {
    const MatrixXd v = randn(4, 25, 3) + MatrixXd::Constant(4, 25, 2.0);
    const PanelData p = PanelData::make(v);
    const FirstStage fs = first_stage_filter(p, {}, true);
    const MatrixXd demeaned = v.colwise() - v.rowwise().mean();
    CHECK(max_abs(fs.residuals - demeaned) < 1e-12);
}

TEST_CASE("first stage without covariates or intercept is the identity") {
    const MatrixXd v = randn(3, 10, 4);
    const FirstStage fs = first_stage_filter(PanelData::make(v), {}, false);
    CHECK(fs.residuals == v);
}

TEST_CASE("noiseless factor covariates are filtered out exactly") {
    const MatrixXd f = randn(30, 1, 8);
    const VectorXd load = randn(5, 9);
    const MatrixXd v = load * f.transpose();
    std::vector<MatrixXd> cov(5, f);
    const FirstStage fs = first_stage_filter(PanelData::make(v), cov, true);
    CHECK(max_abs(fs.residuals) < 1e-10);
    const FirstStage shared = first_stage_filter_shared(PanelData::make(v), f, false);
    CHECK(max_abs(shared.residuals) < 1e-10);
}

TEST_CASE("filtering twice is idempotent") {
    const MatrixXd v = randn(6, 40, 12);
    const MatrixXd X = randn(40, 2, 13);
    const FirstStage once = first_stage_filter_shared(PanelData::make(v), X, true);
    const FirstStage twice = first_stage_filter_shared(PanelData::make(once.residuals), X, true);
    CHECK(max_abs(twice.residuals - once.residuals) < 1e-10);
}

TEST_CASE("first stage errors carry the series id") {
    const PanelData p = PanelData::make(randn(2, 10, 1), {"x", "y"}, {"1", "2", "3", "4", "5", "6", "7", "8", "9", "10"});
    std::vector<MatrixXd> cov{randn(10, 1, 2), MatrixXd::Constant(10, 1, 1.0)};
    try {
        first_stage_filter(p, cov, true);
        FAIL("expected an error");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("series y") != std::string::npos);
    }
    CHECK_THROWS_AS(first_stage_filter(p, {randn(9, 1, 3), randn(10, 1, 4)}, true), InvalidInput);
}

TEST_CASE("AR(1) coefficient is recovered") {
    Rng rng(21);
    std::normal_distribution<double> e;
    VectorXd y(5000);
    double prev = 0.0;
    for (Index t = 0; t < 5200; ++t) {
        prev = 0.8 * prev + e(rng);
        if (t >= 200) y(t - 200) = prev;
    }
    const ArFit fit = ar_fit(y, 1);
    CHECK(fit.phi(0) >= 0.75);
    CHECK(fit.phi(0) <= 0.85);
}

TEST_CASE("AR on white noise") {
    const VectorXd y = randn(2000, 33).array() + 1.5;
    const ArFit fit = ar_fit(y, 2);
    const double se = 1.0 / std::sqrt(2000.0);
    CHECK(std::abs(fit.phi(0)) < 3.0 * se);
    CHECK(std::abs(fit.phi(1)) < 3.0 * se);
    const double mean = y.mean();
    CHECK(std::abs(fit.intercept / (1.0 - fit.phi.sum()) - mean) < 3.0 * se);
}

TEST_CASE("AR degenerate inputs") {
    CHECK_THROWS_AS(ar_fit(VectorXd::Constant(50, 2.0), 1), NumericalError);
    CHECK_THROWS_AS(ar_fit(randn(6, 1), 2), InvalidInput);
}

TEST_CASE("AR forecasts") {
    ArFit fit;
    fit.order = 1;
    fit.intercept = 2.0;
    fit.phi = VectorXd::Zero(1);
    CHECK(ar_forecast(fit, VectorXd::Constant(1, 9.0)) == 2.0);
    fit.intercept = 0.0;
    fit.phi(0) = 1.0;
    CHECK(ar_forecast(fit, VectorXd::Constant(1, 7.0)) == 7.0);
    CHECK_THROWS_AS(ar_forecast(fit, VectorXd::Zero(2)), InvalidInput);
}

TEST_CASE("AR forecast reproduces the in-sample fit") {
    const VectorXd y = randn(120, 44);
    const int p = 3;
    const ArFit fit = ar_fit(y, p);
    for (Index t = p; t < y.size(); ++t) {
        VectorXd recent(p);
        for (int l = 0; l < p; ++l) recent(l) = y(t - 1 - l);
        const double fitted = y(t) - fit.residuals(t - p);
        CHECK(ar_forecast(fit, recent) == doctest::Approx(fitted).epsilon(1e-10));
    }
}

}
