#include "farm/covtest.hpp"

#include "farm/error.hpp"
#include "farm/parallel.hpp"
#include "farm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace farm {

IndexSet IndexSet::make(std::vector<Pair> pairs, Index n) {
    std::set<Pair> seen;
    for (const auto& [i, j] : pairs) {
        if (i < 0 || j < 0 || i >= n || j >= n)
            throw InvalidInput("index pair (" + std::to_string(i + 1) + ", " + std::to_string(j + 1) +
                               ") outside 1.." + std::to_string(n));
        if (!seen.insert({i, j}).second)
            throw InvalidInput("duplicate index pair (" + std::to_string(i + 1) + ", " + std::to_string(j + 1) + ")");
    }
    IndexSet set;
    set.pairs_ = std::move(pairs);
    set.n_ = n;
    return set;
}

IndexSet IndexSet::offdiag(Index n) {
    std::vector<Pair> pairs;
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
    return make(std::move(pairs), n);
}

IndexSet IndexSet::row(Index i, Index n) {
    if (i < 0 || i >= n) throw InvalidInput("row index outside the panel");
    std::vector<Pair> pairs;
    for (Index j = 0; j < n; ++j)
        if (j != i) pairs.emplace_back(i, j);
    return make(std::move(pairs), n);
}

IndexSet IndexSet::across_blocks(const std::vector<int>& block, Index n) {
    if (static_cast<Index>(block.size()) != n) throw InvalidInput("block labels must cover every series");
    std::vector<Pair> pairs;
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j)
            if (block[std::size_t(i)] != block[std::size_t(j)]) pairs.emplace_back(i, j);
    return make(std::move(pairs), n);
}

IndexSet IndexSet::subsample(std::size_t cap, std::uint64_t seed) const {
    if (pairs_.size() <= cap) return *this;
    std::vector<std::size_t> order(pairs_.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(stream_seed(seed, 0, 0x5ab5));
    // Partial Fisher-Yates; keep the first cap positions.
    for (std::size_t k = 0; k < cap; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, order.size() - 1);
        std::swap(order[k], order[pick(rng)]);
    }
    order.resize(cap);
    std::sort(order.begin(), order.end());
    std::vector<Pair> kept;
    kept.reserve(cap);
    for (auto k : order) kept.push_back(pairs_[k]);
    return make(std::move(kept), n_);
}

IndexSet IndexSet::merged(const IndexSet& other) const {
    std::vector<Pair> all = pairs_;
    std::set<Pair> seen(pairs_.begin(), pairs_.end());
    for (const auto& p : other.pairs_)
        if (seen.insert(p).second) all.push_back(p);
    return make(std::move(all), std::max(n_, other.n_));
}

MatrixXd sample_cov(const MatrixXd& U) {
    if (U.cols() < 2) throw InvalidInput("sample_cov: need T >= 2");
    return U * U.transpose() / double(U.cols());
}

MatrixXd cov_moment_series(const MatrixXd& U, const IndexSet& D, const MatrixXd& sigma) {
    const Index n = U.rows();
    if (sigma.rows() != n || sigma.cols() != n) throw InvalidInput("cov_moment_series: sigma shape mismatch");
    MatrixXd out(D.size(), U.cols());
    Index k = 0;
    for (const auto& [i, j] : D.pairs()) {
        if (i >= n || j >= n) throw InvalidInput("cov_moment_series: index out of range");
        out.row(k++) = (U.row(i).array() * U.row(j).array() - sigma(i, j)).matrix();
    }
    return out;
}

double order_statistic(const std::vector<double>& sorted, double tau) {
    if (sorted.empty()) throw InvalidInput("order_statistic: no bootstrap draws");
    if (!(tau > 0.0 && tau <= 1.0)) throw InvalidInput("order_statistic: tau must lie in (0, 1]");
    const auto B = sorted.size();
    // Guard against tau * B landing a hair above an integer.
    auto k = static_cast<std::size_t>(std::ceil(tau * double(B) - 1e-9));
    k = std::clamp<std::size_t>(k, 1, B);
    return sorted[k - 1];
}

double StructureTestResult::quantile(double tau) const { return order_statistic(bootstrap_draws, tau); }

std::vector<double> gaussian_max_bootstrap(const VectorXd& eigenvalues, const MatrixXd& eigenvectors, int B,
                                           std::uint64_t seed) {
    if (B < 1) throw InvalidInput("bootstrap: B must be positive");
    const Index d = eigenvalues.size();
    const MatrixXd root =
        eigenvectors * eigenvalues.cwiseMax(0.0).cwiseSqrt().asDiagonal() * eigenvectors.transpose();

    MatrixXd normals(d, B);
    parallel_for(static_cast<std::size_t>(B), [&](std::size_t b) {
        Rng rng = make_stream(seed, b, 0xb007);
        std::normal_distribution<double> normal;
        for (Index k = 0; k < d; ++k) normals(k, Index(b)) = normal(rng);
    });
    const MatrixXd Z = root * normals;
    std::vector<double> maxima(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) maxima[std::size_t(b)] = Z.col(b).cwiseAbs().maxCoeff();
    std::sort(maxima.begin(), maxima.end());
    return maxima;
}

StructureTestResult structure_test_from_moments(const VectorXd& estimates, const VectorXd& null_values,
                                                const MatrixXd& moments, const TestConfig& config) {
    const Index d = estimates.size(), T = moments.cols();
    if (d < 1) throw InvalidInput("structure test: empty index set");
    if (null_values.size() != d || moments.rows() != d)
        throw InvalidInput("structure test: null values must match the index set (" + std::to_string(d) + ")");
    if (config.B < 100) throw InvalidInput("structure test: need B >= 100 bootstrap draws");

    StructureTestResult res;
    res.estimates = estimates;
    res.null_values = null_values;
    res.T = T;
    res.B = config.B;
    res.seed = config.seed;
    res.kernel.kind = config.kernel;
    res.kernel.bandwidth = config.bandwidth > 0.0 ? config.bandwidth : double(default_bandwidth(T));
    res.statistic = (std::sqrt(double(T)) * (estimates - null_values)).cwiseAbs().maxCoeff();

    res.hac = hac_long_run_cov(moments, res.kernel);
    if (!(res.hac.upsilon.diagonal().maxCoeff() > 0.0))
        throw NumericalError("structure test: long-run covariance has an all-zero diagonal (degenerate test)");
    res.bootstrap_draws = gaussian_max_bootstrap(res.hac.eigenvalues, res.hac.eigenvectors, config.B, config.seed);
    for (double tau : config.taus) res.quantiles[tau] = res.quantile(tau);

    const auto exceed = static_cast<double>(
        res.bootstrap_draws.end() -
        std::lower_bound(res.bootstrap_draws.begin(), res.bootstrap_draws.end(), res.statistic));
    res.p_value = (1.0 + exceed) / (double(config.B) + 1.0);
    return res;
}

StructureTestResult cov_structure_test(const MatrixXd& U, const IndexSet& D, const VectorXd& null_values,
                                       const TestConfig& config) {
    const MatrixXd sigma = sample_cov(U);
    VectorXd est(D.size());
    Index k = 0;
    for (const auto& [i, j] : D.pairs()) est(k++) = sigma(i, j);
    auto res = structure_test_from_moments(est, null_values, cov_moment_series(U, D, sigma), config);
    res.kind = "cov";
    return res;
}

std::size_t PartialCovEstimate::max_active_set() const {
    std::size_t m = 0;
    for (const auto& meta : lasso_meta) m = std::max({m, meta.active_ij, meta.active_ji});
    return m;
}

MatrixXd PartialCovEstimate::moment_series() const {
    const Index d = static_cast<Index>(pairs.size());
    const Index T = d > 0 ? residual_pairs.front().first.size() : 0;
    MatrixXd out(d, T);
    for (Index k = 0; k < d; ++k) {
        const auto& [a, b] = residual_pairs[std::size_t(k)];
        out.row(k) = (a.array() * b.array() - pi_hat(k)).matrix().transpose();
    }
    return out;
}

PartialCovEstimate partial_cov_estimate(const MatrixXd& U, const IndexSet& D, const PartialCovConfig& config) {
    const Index n = U.rows(), T = U.cols();
    if (n < 3) throw InvalidInput("partial covariance needs at least three series");
    for (const auto& [i, j] : D.pairs()) {
        if (i == j) throw InvalidInput("partial covariance pairs must have i != j");
        if (i >= n || j >= n) throw InvalidInput("partial covariance: index out of range");
    }

    // One regression per ordered (target, excluded) key; (i, j) and (j, i)
    // share both of theirs.
    std::map<IndexSet::Pair, std::size_t> slot;
    std::vector<IndexSet::Pair> keys;
    for (const auto& [i, j] : D.pairs())
        for (auto key : {IndexSet::Pair{i, j}, IndexSet::Pair{j, i}})
            if (slot.emplace(key, keys.size()).second) keys.push_back(key);

    const MatrixXd gram = U * U.transpose() / double(T);
    struct Regression {
        VectorXd residual;
        double xi = 0.0;
        std::size_t active = 0;
    };
    std::vector<Regression> fits(keys.size());
    parallel_for(keys.size(), [&](std::size_t k) {
        const auto [target, excluded] = keys[k];
        std::vector<Index> cols;
        for (Index c = 0; c < n; ++c)
            if (c != target && c != excluded) cols.push_back(c);
        const Index m = static_cast<Index>(cols.size());
        MatrixXd sub(m, m);
        VectorXd xty(m);
        for (Index a = 0; a < m; ++a) {
            xty(a) = gram(cols[std::size_t(a)], target);
            for (Index b = 0; b < m; ++b) sub(a, b) = gram(cols[std::size_t(a)], cols[std::size_t(b)]);
        }
        const auto problem =
            LassoProblem::from_gram(std::move(sub), std::move(xty), gram(target, target), T, config.path.lasso);
        const LassoFit fit = lasso_select(problem, config.path);
        Regression& out = fits[k];
        out.residual = U.row(target).transpose();
        for (Index a : fit.active_set) out.residual -= fit.theta(a) * U.row(cols[std::size_t(a)]).transpose();
        out.xi = fit.xi;
        out.active = fit.active_set.size();
    });

    PartialCovEstimate est;
    est.pairs = D.pairs();
    est.pi_hat.resize(D.size());
    for (std::size_t k = 0; k < est.pairs.size(); ++k) {
        const auto [i, j] = est.pairs[k];
        const Regression& ij = fits[slot.at({i, j})];
        const Regression& ji = fits[slot.at({j, i})];
        est.residual_pairs.emplace_back(ij.residual, ji.residual);
        est.pi_hat(Index(k)) = ij.residual.dot(ji.residual) / double(T);
        est.lasso_meta.push_back({ij.xi, ji.xi, ij.active, ji.active});
    }
    return est;
}

StructureTestResult pcov_structure_test(const PartialCovEstimate& estimate, const VectorXd& null_values,
                                        const TestConfig& config) {
    auto res = structure_test_from_moments(estimate.pi_hat, null_values, estimate.moment_series(), config);
    res.kind = "pcov";
    res.max_active_set = estimate.max_active_set();
    return res;
}

StructureTestResult pcov_structure_test(const MatrixXd& U, const IndexSet& D, const VectorXd& null_values,
                                        const TestConfig& config, const PartialCovConfig& pcov) {
    return pcov_structure_test(partial_cov_estimate(U, D, pcov), null_values, config);
}

}  // namespace farm
