#include "farm/error.hpp"
#include "farm/pipeline.hpp"
#include "farm/simulation.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace farm;
using namespace farm::testing;

namespace {

PanelData factor_panel(Index n, Index T, std::uint64_t seed, double link = 0.0) {
    const MatrixXd F = randn(T, 2, seed);
    const MatrixXd L = randn(n, 2, seed + 1);
    MatrixXd U = randn(n, T, seed + 2);
    if (link != 0.0) U.row(0) += link * U.row(1);
    return PanelData::make(MatrixXd(L * F.transpose() + U).array() + 1.0);
}

double mean_square(const VectorXd& v) { return v.squaredNorm() / double(v.size()); }

double sample_variance(const VectorXd& v) { return (v.array() - v.mean()).square().mean(); }

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("in-sample prediction telescopes to the target minus its stage-3 residual") {
    const PanelData panel = factor_panel(12, 80, 1, 0.8);
    FarmConfig cfg;
    cfg.factor_rule = FactorRule::fixed(2);
    const std::vector<MatrixXd> cov(12, randn(80, 1, 9));
    const FarmModel model = farm_fit(panel, cov, cfg);
    for (Index i = 0; i < 12; ++i) {
        const VectorXd v = model.stage3_residual(i);
        for (Index t = 0; t < 80; ++t)
            CHECK(std::abs(farm_predict_in_sample(model, i, t) - (panel.values()(i, t) - v(t))) < 1e-10);
    }
}

TEST_CASE("zero inputs give the stage-1 intercept") {
    const PanelData panel = factor_panel(6, 50, 2);
    FarmConfig cfg;
    cfg.factor_rule = FactorRule::fixed(1);
    const FarmModel model = farm_fit(panel, {}, cfg);
    CHECK(farm_predict(model, 0, VectorXd(0), VectorXd::Zero(1), VectorXd::Zero(5)) == model.gamma[0](0));
    cfg.add_intercept = false;
    const FarmModel no_int = farm_fit(panel, {}, cfg);
    CHECK(farm_predict(no_int, 0, VectorXd(0), VectorXd::Zero(1), VectorXd::Zero(5)) == 0.0);
}

TEST_CASE("nesting under an infinite penalty") {
    const PanelData panel = factor_panel(8, 60, 3, 0.9);
    FarmConfig cfg;
    cfg.factor_rule = FactorRule::fixed(2);
    cfg.path.fixed_xi = std::numeric_limits<double>::infinity();
    const FarmModel pcr = farm_fit(panel, {}, cfg);
    for (Index i = 0; i < 8; ++i) {
        CHECK(pcr.target(i).lasso.active_set.empty());
        for (Index t = 0; t < 60; ++t) {
            const double want = pcr.gamma[std::size_t(i)](0) + pcr.factors.loadings.row(i).dot(pcr.factors.factors.row(t));
            CHECK(farm_predict_in_sample(pcr, i, t) == want);
        }
    }
    cfg.factor_rule = FactorRule::fixed(0);
    const FarmModel stage1 = farm_fit(panel, {}, cfg);
    CHECK(stage1.factors_skipped);
    CHECK(stage1.factors.r == 0);
    for (Index t = 0; t < 60; ++t) CHECK(farm_predict_in_sample(stage1, 3, t) == stage1.gamma[3](0));
}

TEST_CASE("theta zero gives the principal component regression forecast") {
    const PanelData panel = factor_panel(7, 40, 4);
    FarmConfig cfg;
    cfg.factor_rule = FactorRule::fixed(2);
    FarmModel model = farm_fit(panel, {}, cfg);
    model.targets[2].lasso.theta.setZero();
    const VectorXd f = randn(2, 5);
    const VectorXd u = randn(6, 6);
    CHECK(farm_predict(model, 2, VectorXd(0), f, u) ==
          doctest::Approx(model.gamma[2](0) + model.factors.loadings.row(2).dot(f)).epsilon(1e-14));
}

TEST_CASE("variance decreases through the stages") {
    const PanelData panel = factor_panel(15, 120, 5, 0.7);
    FarmConfig cfg;
    cfg.factor_rule = parse_factor_rule("ic1");
    const FarmModel model = farm_fit(panel, {}, cfg);
    for (Index i = 0; i < 15; ++i) {
        const double vy = sample_variance(panel.values().row(i).transpose());
        const double vr = mean_square(model.stage1_residuals.row(i).transpose());
        const double vu = mean_square(model.factors.residuals.row(i).transpose());
        const double vv = mean_square(model.stage3_residual(i));
        CHECK(vy >= vr - 1e-12);
        CHECK(vr >= vu - 1e-12);
        CHECK(vu >= vv - 1e-12);
    }
}

TEST_CASE("dimension chain") {
    const PanelData panel = factor_panel(9, 70, 6);
    FarmConfig cfg;
    cfg.factor_rule = FactorRule::fixed(2);
    cfg.targets = {0, 4};
    const FarmModel model = farm_fit(panel, {}, cfg);
    CHECK(model.stage1_residuals.rows() == 9);
    CHECK(model.stage1_residuals.cols() == 70);
    CHECK(model.factors.factors.rows() == 70);
    CHECK(model.factors.factors.cols() == 2);
    CHECK(model.factors.loadings.rows() == 9);
    CHECK(model.targets.size() == 2);
    CHECK(model.target(4).lasso.theta.size() == 8);
    CHECK(model.target(4).predictors == std::vector<Index>{0, 1, 2, 3, 5, 6, 7, 8});
    CHECK_THROWS_AS(model.target(1), InvalidInput);
    CHECK_THROWS_AS(farm_predict(model, 0, VectorXd(0), VectorXd::Zero(3), VectorXd::Zero(8)), InvalidInput);
    CHECK_THROWS_AS(farm_predict(model, 0, VectorXd::Zero(1), VectorXd::Zero(2), VectorXd::Zero(8)), InvalidInput);
    CHECK_THROWS_AS(farm_predict(model, 0, VectorXd(0), VectorXd::Zero(2), VectorXd::Zero(7)), InvalidInput);
    cfg.targets = {9};
    CHECK_THROWS_AS(farm_fit(panel, {}, cfg), InvalidInput);
}

TEST_CASE("stage errors are tagged") {
    const PanelData panel = factor_panel(4, 30, 7);
    std::vector<MatrixXd> cov(4, MatrixXd::Constant(30, 1, 2.0));
    try {
        farm_fit(panel, cov, FarmConfig{});
        FAIL("expected a stage-1 error");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).rfind("stage 1", 0) == 0);
    }
}

TEST_CASE("model JSON round trip") {
    const PanelData panel = factor_panel(6, 45, 8, 0.6);
    FarmConfig cfg;
    cfg.factor_rule = FactorRule::fixed(1);
    cfg.run_diagnostics = true;
    cfg.force_factors = true;
    cfg.test.B = 200;
    const std::vector<MatrixXd> cov(6, randn(45, 2, 10));
    const FarmModel model = farm_fit(panel, cov, cfg);
    const Json doc = model_to_json(model);
    const FarmModel back = model_from_json(Json::parse(doc.dump()));
    CHECK(model_to_json(back).dump() == doc.dump());
    for (Index i = 0; i < 6; ++i)
        for (Index t = 0; t < 45; t += 7) CHECK(farm_predict_in_sample(back, i, t) == farm_predict_in_sample(model, i, t));
    CHECK_THROWS_AS(model_from_json(Json{{"format", "other"}}), InvalidInput);
    CHECK_THROWS_AS(model_from_json(Json{{"format", "farm-model"}}), InvalidInput);
}

TEST_CASE("stagewise report") {
    const PanelData panel = factor_panel(6, 45, 11);
    FarmConfig cfg;
    cfg.factor_rule = FactorRule::fixed(0);
    const Json skipped = stagewise_report(farm_fit(panel, {}, cfg));
    CHECK(skipped["factors"]["status"] == "skipped");
    CHECK(skipped["factors"]["r"] == 0);
    CHECK(Json::parse(skipped.dump()) == skipped);

    cfg.factor_rule = FactorRule::fixed(2);
    const Json est = stagewise_report(farm_fit(panel, {}, cfg));
    CHECK(est["factors"]["status"] == "estimated");
    CHECK(est["factors"]["r"] == 2);
    CHECK(est["stage3"]["targets"].size() == 6);
    CHECK(Json::parse(est.dump()) == est);
}

TEST_CASE("diagnostics decide whether factors are estimated") {
    const PanelData noise = PanelData::make(randn(8, 150, 12));
    FarmConfig cfg;
    cfg.run_diagnostics = true;
    cfg.factor_rule = FactorRule::fixed(1);
    cfg.test.B = 300;
    cfg.test.seed = 5;
    const FarmModel m = farm_fit(noise, {}, cfg);
    REQUIRE(m.diagnostics.size() >= 1);
    CHECK(m.diagnostics[0].stage == "stage1");
    CHECK(m.factors_skipped == !m.diagnostics[0].rejected);

    const PanelData strong = factor_panel(8, 150, 13);
    const FarmModel s = farm_fit(strong, {}, cfg);
    CHECK(s.diagnostics[0].rejected);
    CHECK_FALSE(s.factors_skipped);
    CHECK(s.diagnostics.size() == 2);
    CHECK(s.diagnostics[1].stage == "stage2");

    cfg.force_factors = false;
    const FarmModel off = farm_fit(strong, {}, cfg);
    CHECK(off.factors_skipped);
    cfg.force_factors = true;
    const FarmModel on = farm_fit(noise, {}, cfg);
    CHECK_FALSE(on.factors_skipped);
    CHECK(on.factors.r == 1);

    cfg.force_factors.reset();
    cfg.diagnostic_kind = DiagnosticKind::PartialCovariance;
    const FarmModel p = farm_fit(strong, {}, cfg);
    CHECK(p.diagnostics[0].kind == "pcov");
}

TEST_CASE("simulated panel selects three factors under IC1") {
    SimulationConfig sc;
    sc.T = 500;
    sc.n = 100;
    sc.seed = 3;
    sc.theta = SimulationConfig::power_theta;
    const SimulatedPanel sim = simulate_dgp(sc, 0);
    FarmConfig cfg;
    cfg.factor_rule = parse_factor_rule("ic1");
    cfg.targets = {0};
    const FarmModel model = farm_fit(sim.panel, {}, cfg);
    const Json report = stagewise_report(model);
    CHECK(report["factors"]["r"] == 3);
}

TEST_CASE("noiseless one-factor panels leave every stage-3 active set empty") {
    int empty = 0, total = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const MatrixXd Y = randn(15, 1, 100 + seed) * randn(1, 120, 200 + seed);
        FarmConfig cfg;
        cfg.factor_rule = FactorRule::fixed(1);
        const FarmModel m = farm_fit(PanelData::make(MatrixXd(Y.array() + 2.0)), {}, cfg);
        for (const auto& t : m.targets) {
            ++total;
            empty += t.lasso.active_set.empty();
        }
    }
    CHECK(double(empty) >= 0.9 * total);
}

}
