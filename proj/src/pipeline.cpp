#include "farm/pipeline.hpp"

#include "farm/error.hpp"
#include "farm/parallel.hpp"

#include <algorithm>

namespace farm {

namespace {

template <class F>
auto tagged(const std::string& stage, F&& body) {
    try {
        return body();
    } catch (const InvalidInput& e) {
        throw InvalidInput(stage + ": " + e.what());
    } catch (const NumericalError& e) {
        throw NumericalError(stage + ": " + e.what());
    }
}

double row_variance(const MatrixXd& m, Index i) {
    const double mean = m.row(i).mean();
    return (m.row(i).array() - mean).square().mean();
}

double mean_row_variance(const MatrixXd& m) {
    double total = 0.0;
    for (Index i = 0; i < m.rows(); ++i) total += row_variance(m, i);
    return total / double(m.rows());
}

DiagnosticSummary run_diagnostic(const std::string& stage, const MatrixXd& U, const FarmConfig& config) {
    const Index n = U.rows();
    IndexSet D = IndexSet::offdiag(n);
    if (n > 64) D = D.subsample(config.max_diag_pairs, config.test.seed);
    VectorXd null = VectorXd::Zero(D.size());

    StructureTestResult res;
    if (config.diagnostic_kind == DiagnosticKind::PartialCovariance) {
        PartialCovConfig pcov;
        pcov.path = config.path;
        pcov.path.fixed_xi.reset();
        res = pcov_structure_test(U, D, null, config.test, pcov);
    } else {
        res = cov_structure_test(U, D, null, config.test);
    }
    DiagnosticSummary s;
    s.stage = stage;
    s.kind = res.kind;
    s.d = res.d();
    s.statistic = res.statistic;
    s.p_value = res.p_value;
    s.level = config.diagnostic_level;
    s.rejected = res.rejects(config.diagnostic_level);
    return s;
}

std::vector<Index> others(Index n, Index i) {
    std::vector<Index> out;
    for (Index j = 0; j < n; ++j)
        if (j != i) out.push_back(j);
    return out;
}

Json summary_json(const DiagnosticSummary& s) {
    return Json{{"stage", s.stage},         {"test", s.kind},   {"d", s.d},
                {"statistic", s.statistic}, {"p_value", s.p_value}, {"level", s.level},
                {"rejected", s.rejected}};
}

}  // namespace

const TargetModel& FarmModel::target(Index series) const {
    for (const auto& t : targets)
        if (t.series == series) return t;
    throw InvalidInput("series " + std::to_string(series + 1) + " was not fitted as a target");
}

VectorXd FarmModel::stage3_residual(Index series) const {
    const TargetModel& tm = target(series);
    const MatrixXd& U = factors.residuals;
    VectorXd v = U.row(series).transpose();
    for (std::size_t k = 0; k < tm.predictors.size(); ++k)
        if (tm.lasso.theta(Index(k)) != 0.0) v -= tm.lasso.theta(Index(k)) * U.row(tm.predictors[k]).transpose();
    return v;
}

FarmModel farm_fit(const PanelData& panel, const std::vector<MatrixXd>& covariates, const FarmConfig& config) {
    const Index n = panel.n(), T = panel.T();
    std::vector<Index> targets = config.targets;
    if (targets.empty())
        for (Index i = 0; i < n; ++i) targets.push_back(i);
    for (Index i : targets)
        if (i < 0 || i >= n) throw InvalidInput("target index " + std::to_string(i + 1) + " outside the panel");

    FarmModel model;
    model.series_ids = panel.series_ids();
    model.time_ids = panel.time_ids();
    model.Y = panel.values();
    model.add_intercept = config.add_intercept;
    model.covariates = covariates;

    FirstStage first =
        tagged("stage 1", [&] { return first_stage_filter(panel, covariates, config.add_intercept); });
    for (auto& fit : first.fits) model.gamma.push_back(std::move(fit.coefficients));
    model.stage1_residuals = std::move(first.residuals);

    bool estimate_factors = true;
    if (config.run_diagnostics && n >= 2) {
        auto s = tagged("stage 1 diagnostic", [&] { return run_diagnostic("stage1", model.stage1_residuals, config); });
        if (!s.rejected) {
            estimate_factors = false;
            model.skip_reason = "stage-1 residual covariance not rejected as diagonal";
        }
        model.diagnostics.push_back(s);
    }
    if (config.force_factors) {
        estimate_factors = *config.force_factors;
        model.skip_reason = estimate_factors ? "" : "factors disabled by configuration";
    }
    if (estimate_factors) {
        model.selection =
            tagged("stage 2", [&] { return select_factor_count(model.stage1_residuals, config.factor_rule); });
        if (model.selection.chosen_r == 0) {
            estimate_factors = false;
            model.skip_reason = "factor rule selected r = 0";
        }
    }
    model.factors_skipped = !estimate_factors;
    if (estimate_factors) {
        model.skip_reason.clear();
        model.factors =
            tagged("stage 2", [&] { return pca_factors(model.stage1_residuals, model.selection.chosen_r); });
        if (config.run_diagnostics && n >= 2)
            model.diagnostics.push_back(tagged(
                "stage 2 diagnostic", [&] { return run_diagnostic("stage2", model.factors.residuals, config); }));
    } else {
        model.selection = FactorSelection{};
        model.factors = no_factors(model.stage1_residuals);
    }

    const MatrixXd& U = model.factors.residuals;
    const MatrixXd gram = U * U.transpose() / double(T);
    model.targets.resize(targets.size());
    tagged("stage 3", [&] {
        parallel_for(targets.size(), [&](std::size_t k) {
            const Index i = targets[k];
            TargetModel& tm = model.targets[k];
            tm.series = i;
            tm.predictors = others(n, i);
            const Index m = static_cast<Index>(tm.predictors.size());
            const double scale = model.stage1_residuals.row(i).squaredNorm() / double(T);
            // A target reproduced exactly by the earlier stages leaves only rounding error to fit.
            if (m == 0 || gram(i, i) <= 1e-20 * scale) {
                tm.lasso.theta = VectorXd::Zero(m);
                tm.lasso.xi = config.path.fixed_xi.value_or(0.0);
                tm.lasso.mean_squared_residual = gram(i, i);
                tm.lasso.objective = gram(i, i);
                tm.lasso.converged = true;
                return;
            }
            MatrixXd sub(m, m);
            VectorXd xty(m);
            for (Index a = 0; a < m; ++a) {
                xty(a) = gram(tm.predictors[std::size_t(a)], i);
                for (Index b = 0; b < m; ++b)
                    sub(a, b) = gram(tm.predictors[std::size_t(a)], tm.predictors[std::size_t(b)]);
            }
            LassoOptions opts = config.path.lasso;
            opts.intercept = false;
            opts.standardize = false;
            const auto problem = LassoProblem::from_gram(std::move(sub), std::move(xty), gram(i, i), T, opts);
            tm.lasso = lasso_select(problem, config.path);
        });
        return 0;
    });
    return model;
}

double farm_predict(const FarmModel& model, Index series, const VectorXd& x_new, const VectorXd& f_new,
                    const VectorXd& u_minus_new) {
    if (series < 0 || series >= model.n()) throw InvalidInput("series index outside the model");
    const TargetModel& tm = model.target(series);
    const VectorXd& gamma = model.gamma[std::size_t(series)];
    const Index offset = model.add_intercept ? 1 : 0;
    if (x_new.size() != gamma.size() - offset)
        throw InvalidInput("covariate vector has length " + std::to_string(x_new.size()) + ", expected " +
                           std::to_string(gamma.size() - offset));
    if (f_new.size() != model.factors.r)
        throw InvalidInput("factor vector has length " + std::to_string(f_new.size()) + ", expected " +
                           std::to_string(model.factors.r));
    if (u_minus_new.size() != tm.lasso.theta.size())
        throw InvalidInput("idiosyncratic vector has length " + std::to_string(u_minus_new.size()) + ", expected " +
                           std::to_string(tm.lasso.theta.size()));

    double y = model.add_intercept ? gamma(0) : 0.0;
    y += gamma.tail(x_new.size()).dot(x_new);
    if (model.factors.r > 0) y += model.factors.loadings.row(series).dot(f_new);
    y += tm.lasso.theta.dot(u_minus_new);
    return y;
}

double farm_predict_in_sample(const FarmModel& model, Index series, Index t) {
    if (t < 0 || t >= model.T()) throw InvalidInput("row " + std::to_string(t) + " outside the sample");
    const TargetModel& tm = model.target(series);
    VectorXd x = VectorXd::Zero(0);
    if (!model.covariates.empty() && model.covariates[std::size_t(series)].cols() > 0)
        x = model.covariates[std::size_t(series)].row(t).transpose();
    VectorXd f = model.factors.r > 0 ? VectorXd(model.factors.factors.row(t).transpose()) : VectorXd::Zero(0);
    VectorXd u(static_cast<Index>(tm.predictors.size()));
    for (std::size_t k = 0; k < tm.predictors.size(); ++k) u(Index(k)) = model.factors.residuals(tm.predictors[k], t);
    return farm_predict(model, series, x, f, u);
}

Json stagewise_report(const FarmModel& model) {
    Json report;
    report["n"] = model.n();
    report["T"] = model.T();

    Json var_y = Json::array(), var_r = Json::array(), var_u = Json::array();
    for (Index i = 0; i < model.n(); ++i) {
        var_y.push_back(row_variance(model.Y, i));
        var_r.push_back(row_variance(model.stage1_residuals, i));
        var_u.push_back(row_variance(model.factors.residuals, i));
    }
    report["stage1"] = Json{{"intercept", model.add_intercept},
                            {"mean_variance_before", mean_row_variance(model.Y)},
                            {"mean_residual_variance", mean_row_variance(model.stage1_residuals)},
                            {"variance_before", std::move(var_y)},
                            {"residual_variance", std::move(var_r)}};

    Json factors;
    factors["status"] = model.factors_skipped ? "skipped" : "estimated";
    if (model.factors_skipped) factors["reason"] = model.skip_reason;
    factors["r"] = model.factors.r;
    if (!model.factors_skipped) {
        factors["selection"] = to_json(model.selection);
        factors["eigenvalues"] = vector_to_json(model.factors.eigenvalues);
    }
    factors["mean_residual_variance"] = mean_row_variance(model.factors.residuals);
    factors["residual_variance"] = std::move(var_u);
    report["factors"] = std::move(factors);

    Json targets = Json::array();
    for (const auto& tm : model.targets) {
        Json active = Json::array();
        for (Index a : tm.lasso.active_set) active.push_back(model.series_ids[std::size_t(tm.predictors[std::size_t(a)])]);
        const VectorXd v = model.stage3_residual(tm.series);
        targets.push_back(Json{{"series", model.series_ids[std::size_t(tm.series)]},
                               {"xi", tm.lasso.xi},
                               {"active_size", tm.lasso.active_set.size()},
                               {"active_series", std::move(active)},
                               {"residual_variance", (v.array() - v.mean()).square().mean()},
                               {"converged", tm.lasso.converged}});
    }
    report["stage3"] = Json{{"targets", std::move(targets)}};

    Json diags = Json::array();
    for (const auto& s : model.diagnostics) diags.push_back(summary_json(s));
    report["diagnostics"] = std::move(diags);
    return report;
}

Json model_to_json(const FarmModel& model) {
    Json doc;
    doc["format"] = "farm-model";
    doc["version"] = 1;
    doc["series_ids"] = model.series_ids;
    doc["time_ids"] = model.time_ids;
    doc["Y"] = matrix_to_json(model.Y);
    doc["add_intercept"] = model.add_intercept;
    Json cov = Json::array();
    for (const auto& c : model.covariates) cov.push_back(matrix_to_json(c));
    doc["covariates"] = std::move(cov);
    Json gamma = Json::array();
    for (const auto& g : model.gamma) gamma.push_back(vector_to_json(g));
    doc["gamma"] = std::move(gamma);
    doc["stage1_residuals"] = matrix_to_json(model.stage1_residuals);
    doc["factors_skipped"] = model.factors_skipped;
    doc["skip_reason"] = model.skip_reason;
    doc["selection"] = to_json(model.selection);
    doc["r"] = model.factors.r;
    doc["factors"] = matrix_to_json(model.factors.factors);
    doc["loadings"] = matrix_to_json(model.factors.loadings);
    doc["eigenvalues"] = vector_to_json(model.factors.eigenvalues);
    doc["idiosyncratic"] = matrix_to_json(model.factors.residuals);
    Json targets = Json::array();
    for (const auto& tm : model.targets)
        targets.push_back(Json{{"series", tm.series}, {"predictors", tm.predictors}, {"lasso", to_json(tm.lasso)}});
    doc["targets"] = std::move(targets);
    Json diags = Json::array();
    for (const auto& s : model.diagnostics) diags.push_back(summary_json(s));
    doc["diagnostics"] = std::move(diags);
    return doc;
}

FarmModel model_from_json(const Json& doc) {
    try {
        if (doc.at("format").get<std::string>() != "farm-model") throw InvalidInput("not a model document");
        FarmModel m;
        m.series_ids = doc.at("series_ids").get<std::vector<std::string>>();
        m.time_ids = doc.at("time_ids").get<std::vector<std::string>>();
        m.Y = matrix_from_json(doc.at("Y"));
        m.add_intercept = doc.at("add_intercept").get<bool>();
        for (const auto& c : doc.at("covariates")) m.covariates.push_back(matrix_from_json(c));
        for (const auto& g : doc.at("gamma")) m.gamma.push_back(vector_from_json(g));
        m.stage1_residuals = matrix_from_json(doc.at("stage1_residuals"));
        m.factors_skipped = doc.at("factors_skipped").get<bool>();
        m.skip_reason = doc.at("skip_reason").get<std::string>();
        const Json& sel = doc.at("selection");
        const std::string method = sel.at("method").get<std::string>();
        m.selection.method = method == "fixed" ? FactorMethod::Fixed : parse_factor_rule(method).method;
        m.selection.kmax = sel.at("kmax").get<int>();
        m.selection.chosen_r = sel.at("chosen_r").get<int>();
        m.selection.criterion_values = sel.at("criterion_values").get<std::vector<double>>();
        m.factors.r = doc.at("r").get<int>();
        m.factors.factors = matrix_from_json(doc.at("factors"));
        m.factors.loadings = matrix_from_json(doc.at("loadings"));
        m.factors.eigenvalues = vector_from_json(doc.at("eigenvalues"));
        m.factors.residuals = matrix_from_json(doc.at("idiosyncratic"));
        for (const auto& t : doc.at("targets")) {
            TargetModel tm;
            tm.series = t.at("series").get<Index>();
            tm.predictors = t.at("predictors").get<std::vector<Index>>();
            tm.lasso = lasso_fit_from_json(t.at("lasso"));
            m.targets.push_back(std::move(tm));
        }
        for (const auto& s : doc.at("diagnostics"))
            m.diagnostics.push_back({s.at("stage").get<std::string>(), s.at("test").get<std::string>(),
                                     s.at("d").get<Index>(), s.at("statistic").get<double>(),
                                     s.at("p_value").get<double>(), s.at("level").get<double>(),
                                     s.at("rejected").get<bool>()});
        if (m.gamma.size() != std::size_t(m.n())) throw InvalidInput("gamma count does not match the panel");
        return m;
    } catch (const Json::exception& e) {
        throw InvalidInput(std::string("model JSON: ") + e.what());
    }
}

}  // namespace farm
