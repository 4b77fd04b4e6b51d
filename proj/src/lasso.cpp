#include "farm/lasso.hpp"

#include "farm/error.hpp"
#include "farm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace farm {

namespace {
constexpr Index kGramColumnLimit = 2000;
}

LassoProblem::LassoProblem(const VectorXd& y, const MatrixXd& X, const LassoOptions& options)
    : options_(options), T_(y.size()), m_(X.cols()) {
    if (X.rows() != T_) throw InvalidInput("lasso: design rows do not match target length");
    if (T_ < 1) throw InvalidInput("lasso: empty target");
    if (!y.allFinite() || !X.allFinite()) throw InvalidInput("lasso: non-finite input");

    const double T = double(T_);
    y_mean_ = options.intercept ? y.mean() : 0.0;
    x_mean_ = options.intercept ? VectorXd(X.colwise().mean().transpose()) : VectorXd::Zero(m_);
    MatrixXd xw = X.rowwise() - x_mean_.transpose();
    VectorXd yc = y.array() - y_mean_;

    const VectorXd raw_ms = X.colwise().squaredNorm().transpose() / T;
    scale_ = VectorXd::Ones(m_);
    VectorXd centred_ms = xw.colwise().squaredNorm().transpose() / T;
    for (Index j = 0; j < m_; ++j) {
        const bool degenerate = centred_ms(j) <= 1e-14 * raw_ms(j);
        if (degenerate) zero_variance_.push_back(j);
        if (options.standardize && !degenerate) scale_(j) = std::sqrt(centred_ms(j));
    }
    if (options.standardize) xw = xw * scale_.cwiseInverse().asDiagonal();

    xty_ = xw.transpose() * yc / T;
    yy_ = yc.squaredNorm() / T;
    use_gram_ = m_ <= kGramColumnLimit;
    if (use_gram_) {
        gram_ = xw.transpose() * xw / T;
        diag_ = gram_.diagonal();
    } else {
        diag_ = xw.colwise().squaredNorm().transpose() / T;
        xc_ = std::move(xw);
        yc_ = std::move(yc);
    }
}

LassoProblem LassoProblem::from_gram(MatrixXd gram, VectorXd xty, double yy, Index T,
                                     const LassoOptions& options) {
    if (gram.rows() != gram.cols() || gram.rows() != xty.size())
        throw InvalidInput("lasso: gram/cross-product shape mismatch");
    LassoProblem p;
    p.options_ = options;
    p.options_.intercept = false;
    p.options_.standardize = false;
    p.T_ = T;
    p.m_ = gram.rows();
    p.use_gram_ = true;
    p.gram_ = std::move(gram);
    p.diag_ = p.gram_.diagonal();
    p.xty_ = std::move(xty);
    p.yy_ = yy;
    p.x_mean_ = VectorXd::Zero(p.m_);
    p.scale_ = VectorXd::Ones(p.m_);
    const double floor = 1e-14 * (p.m_ > 0 ? std::max(p.diag_.maxCoeff(), 0.0) : 0.0);
    for (Index j = 0; j < p.m_; ++j)
        if (p.diag_(j) <= floor) p.zero_variance_.push_back(j);
    return p;
}

double LassoProblem::xi_max() const {
    double best = 0.0;
    std::size_t z = 0;
    for (Index j = 0; j < m_; ++j) {
        if (z < zero_variance_.size() && zero_variance_[z] == j) {
            ++z;
            continue;
        }
        best = std::max(best, std::abs(2.0 * xty_(j)));
    }
    return best;
}

namespace {
// xi * ||theta||_1 with 0 * inf taken as 0, so an infinite penalty is usable.
double penalty_term(double xi, const VectorXd& theta) {
    const double l1 = theta.lpNorm<1>();
    return l1 == 0.0 ? 0.0 : xi * l1;
}
}  // namespace

double LassoProblem::mean_squared_residual(const VectorXd& theta) const {
    if (use_gram_) return yy_ - 2.0 * theta.dot(xty_) + theta.dot(gram_ * theta);
    return (yc_ - xc_ * theta).squaredNorm() / double(T_);
}

LassoFit LassoProblem::solve(double xi, const VectorXd* warm_start) const {
    if (!(xi >= 0.0)) throw InvalidInput("lasso: penalty must be non-negative");
    VectorXd theta = VectorXd::Zero(m_);
    if (warm_start) {
        if (warm_start->size() != m_) throw InvalidInput("lasso: warm start has wrong length");
        theta = warm_start->cwiseProduct(scale_);
    }
    std::vector<char> skip(static_cast<std::size_t>(m_), 0);
    for (Index j : zero_variance_) {
        skip[std::size_t(j)] = 1;
        theta(j) = 0.0;
    }

    const double half = xi / 2.0;
    const double T = double(T_);
    VectorXd grad;     // X_j' r / T, gram mode
    VectorXd residual; // residual mode
    if (use_gram_)
        grad = xty_ - gram_ * theta;
    else
        residual = yc_ - xc_ * theta;

    auto update = [&](Index j) -> double {
        const double d = diag_(j);
        const double z = (use_gram_ ? grad(j) : xc_.col(j).dot(residual) / T) + d * theta(j);
        const double next = soft_threshold(z, half) / d;
        const double delta = next - theta(j);
        if (delta != 0.0) {
            if (use_gram_)
                grad.noalias() -= gram_.col(j) * delta;
            else
                residual.noalias() -= xc_.col(j) * delta;
            theta(j) = next;
        }
        return std::abs(delta);
    };
    auto objective = [&] { return mean_squared_residual(theta) + penalty_term(xi, theta); };
    // Active-set Newton step: solve the stationarity conditions with signs held fixed,
    // stopping at the first sign change and dropping that coordinate. Each step stays in
    // one orthant, where the objective is a convex quadratic, so it never increases.
    auto newton_step = [&](std::vector<Index> active) {
        const VectorXd start = theta;
        while (!active.empty()) {
            const Index k = Index(active.size());
            MatrixXd G(k, k);
            VectorXd rhs(k);
            for (Index a = 0; a < k; ++a) {
                const Index ja = active[std::size_t(a)];
                rhs(a) = xty_(ja) - half * (theta(ja) > 0.0 ? 1.0 : -1.0);
                for (Index b = 0; b <= a; ++b) {
                    const Index jb = active[std::size_t(b)];
                    G(a, b) = G(b, a) = use_gram_ ? gram_(ja, jb) : xc_.col(ja).dot(xc_.col(jb)) / T;
                }
            }
            const Eigen::LDLT<MatrixXd> ldlt(G);
            if (ldlt.info() != Eigen::Success) break;
            const VectorXd sol = ldlt.solve(rhs);
            if (!sol.allFinite() || (G * sol - rhs).norm() > 1e-8 * (1.0 + rhs.norm())) break;
            double step = 1.0;
            Index blocking = -1;
            for (Index a = 0; a < k; ++a) {
                const double cur = theta(active[std::size_t(a)]);
                if (sol(a) == 0.0 || (sol(a) > 0.0) != (cur > 0.0)) {
                    const double t = cur / (cur - sol(a));
                    if (t < step) {
                        step = t;
                        blocking = a;
                    }
                }
            }
            for (Index a = 0; a < k; ++a) {
                const Index j = active[std::size_t(a)];
                theta(j) += step * (sol(a) - theta(j));
            }
            if (blocking < 0) break;
            theta(active[std::size_t(blocking)]) = 0.0;
            active.erase(active.begin() + std::ptrdiff_t(blocking));
        }
        if (use_gram_)
            grad.noalias() -= gram_ * (theta - start);
        else
            residual = yc_ - xc_ * theta;
    };
    std::vector<double> history;
    int iterations = 0;
    bool converged = false;
    while (iterations < options_.max_iter && !converged) {
        double max_change = 0.0;
        for (Index j = 0; j < m_; ++j)
            if (!skip[std::size_t(j)]) max_change = std::max(max_change, update(j));
        ++iterations;
        if (options_.record_objective) history.push_back(objective());
        if (max_change < options_.conv_tol) {
            converged = true;
            break;
        }
        std::vector<Index> active;
        for (Index j = 0; j < m_; ++j)
            if (theta(j) != 0.0) active.push_back(j);
        for (int inner = 0; iterations < options_.max_iter; ++inner) {
            if (inner % 16 == 0) newton_step(active);
            double change = 0.0;
            for (Index j : active) change = std::max(change, update(j));
            ++iterations;
            if (options_.record_objective) history.push_back(objective());
            if (change < options_.conv_tol) break;
        }
    }
    return finalize(std::move(theta), xi, iterations, converged, std::move(history));
}

LassoFit LassoProblem::finalize(VectorXd working, double xi, int iterations, bool converged,
                                std::vector<double> history) const {
    LassoFit fit;
    fit.xi = xi;
    fit.iterations = iterations;
    fit.converged = converged;
    fit.mean_squared_residual = std::max(mean_squared_residual(working), 0.0);
    fit.objective = fit.mean_squared_residual + penalty_term(xi, working);
    fit.theta = working.cwiseQuotient(scale_);
    fit.intercept = options_.intercept ? y_mean_ - x_mean_.dot(fit.theta) : 0.0;
    for (Index j = 0; j < m_; ++j)
        if (fit.theta(j) != 0.0) fit.active_set.push_back(j);
    fit.zero_variance_columns = zero_variance_;
    fit.objective_history = std::move(history);
    return fit;
}

LassoFit lasso_fit(const VectorXd& y, const MatrixXd& X, double xi, const std::optional<VectorXd>& warm_start,
                   const LassoOptions& options) {
    LassoProblem problem(y, X, options);
    return problem.solve(xi, warm_start ? &*warm_start : nullptr);
}

PenaltyPath lasso_path_bic(const LassoProblem& problem, const PathOptions& options) {
    if (options.grid_size < 2) throw InvalidInput("lasso path: grid_size must be at least 2");
    if (!(options.xi_min_ratio > 0.0 && options.xi_min_ratio < 1.0))
        throw InvalidInput("lasso path: xi_min_ratio must lie in (0, 1)");

    const double xi_max = problem.xi_max();
    const double T = double(problem.observations());
    PenaltyPath path;
    if (xi_max > 0.0) {
        for (int k = 0; k < options.grid_size; ++k)
            path.grid.push_back(xi_max * std::pow(options.xi_min_ratio, double(k) / (options.grid_size - 1)));
    } else {
        path.grid.push_back(0.0);  // the target is orthogonal to every column
    }

    const VectorXd* warm = nullptr;
    for (double xi : path.grid) {
        path.fits.push_back(problem.solve(xi, warm));
        warm = &path.fits.back().theta;
        const LassoFit& fit = path.fits.back();
        const double rss_t = std::max(fit.mean_squared_residual, std::numeric_limits<double>::min());
        path.bic.push_back(T * std::log(rss_t) + double(fit.active_set.size()) * std::log(T));
    }
    for (std::size_t k = 1; k < path.bic.size(); ++k)
        if (path.bic[k] < path.bic[path.chosen]) path.chosen = k;
    return path;
}

}  // namespace farm

namespace farm {

LassoFit lasso_select(const LassoProblem& problem, const PathOptions& options) {
    if (options.fixed_xi) return problem.solve(*options.fixed_xi);
    PenaltyPath path = lasso_path_bic(problem, options);
    return std::move(path.fits[path.chosen]);
}

PenaltyPath lasso_path_bic(const VectorXd& y, const MatrixXd& X, const PathOptions& options) {
    return lasso_path_bic(LassoProblem(y, X, options.lasso), options);
}

KktReport kkt_check(const LassoFit& fit, const VectorXd& y, const MatrixXd& X, double tol) {
    if (X.rows() != y.size() || X.cols() != fit.theta.size()) throw InvalidInput("kkt_check: shape mismatch");
    const double T = double(y.size());
    const VectorXd r = (y - X * fit.theta).array() - fit.intercept;
    const VectorXd grad = 2.0 / T * (X.transpose() * r);
    double worst = 0.0;
    for (Index j = 0; j < grad.size(); ++j) {
        const double v = fit.theta(j) != 0.0 ? std::abs(grad(j) - fit.xi * (fit.theta(j) > 0 ? 1.0 : -1.0))
                                             : std::max(0.0, std::abs(grad(j)) - fit.xi);
        worst = std::max(worst, v);
    }
    if (fit.intercept != 0.0) worst = std::max(worst, std::abs(2.0 / T * r.sum()));
    return {worst <= tol, worst};
}

double compatibility_constant_estimate(const MatrixXd& M, const std::vector<Index>& support, double zeta,
                                       int samples, std::uint64_t seed) {
    const Index n = M.rows();
    if (M.cols() != n || support.empty()) throw InvalidInput("compatibility constant: bad inputs");
    std::vector<char> in_support(static_cast<std::size_t>(n), 0);
    for (Index j : support) {
        if (j < 0 || j >= n) throw InvalidInput("compatibility constant: support index out of range");
        in_support[std::size_t(j)] = 1;
    }
    Rng rng(seed);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unit;
    const double root_s = std::sqrt(double(support.size()));
    double best = std::numeric_limits<double>::infinity();
    VectorXd x(n);
    for (int s = 0; s < samples; ++s) {
        double on = 0.0, off = 0.0;
        for (Index j = 0; j < n; ++j) {
            x(j) = normal(rng);
            (in_support[std::size_t(j)] ? on : off) += std::abs(x(j));
        }
        const double budget = (s % 4 == 0) ? zeta : zeta * unit(rng);
        for (Index j = 0; j < n; ++j) {
            if (in_support[std::size_t(j)])
                x(j) /= on;
            else
                x(j) = off > 0.0 ? x(j) * budget / off : 0.0;
        }
        best = std::min(best, std::sqrt(std::max(0.0, x.dot(M * x))) * root_s);
    }
    return best;
}

}  // namespace farm
