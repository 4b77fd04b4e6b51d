#pragma once

#include "farm/hac.hpp"
#include "farm/lasso.hpp"
#include "farm/panel.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <utility>
#include <vector>

namespace farm {

/// The index set D of covariance entries under test. Indices are zero-based;
/// pairs are unique and (i, i) is allowed.
class IndexSet {
public:
    using Pair = std::pair<Index, Index>;

    static IndexSet make(std::vector<Pair> pairs, Index n);
    /// All pairs (i, j) with i < j.
    static IndexSet offdiag(Index n);
    /// (i, j) for every j != i.
    static IndexSet row(Index i, Index n);
    /// Pairs i < j falling in different blocks; block[i] labels series i.
    static IndexSet across_blocks(const std::vector<int>& block, Index n);

    const std::vector<Pair>& pairs() const noexcept { return pairs_; }
    Index size() const noexcept { return static_cast<Index>(pairs_.size()); }
    Index dimension() const noexcept { return n_; }

    /// Seeded random subset of at most cap pairs, original order preserved.
    IndexSet subsample(std::size_t cap, std::uint64_t seed) const;
    IndexSet merged(const IndexSet& other) const;

private:
    std::vector<Pair> pairs_;
    Index n_ = 0;
};

/// (1/T) U U' with no mean removal.
MatrixXd sample_cov(const MatrixXd& U);

/// Row k at time t: U[i_k, t] U[j_k, t] - sigma[i_k, j_k].
MatrixXd cov_moment_series(const MatrixXd& U, const IndexSet& D, const MatrixXd& sigma);

struct TestConfig {
    KernelKind kernel = KernelKind::Bartlett;
    double bandwidth = 0.0;  // <= 0 selects floor(T/3)
    int B = 1000;
    std::uint64_t seed = 0;
    std::vector<double> taus{0.90, 0.95, 0.99};
};

struct StructureTestResult {
    std::string kind;  // "cov" or "pcov"
    double statistic = 0.0;
    VectorXd estimates;
    VectorXd null_values;
    std::map<double, double> quantiles;
    double p_value = 1.0;
    int B = 0;
    std::uint64_t seed = 0;
    KernelSpec kernel;
    Index T = 0;
    HacEstimate hac;
    std::vector<double> bootstrap_draws;  // sorted S*_b
    std::optional<std::size_t> max_active_set;

    Index d() const noexcept { return estimates.size(); }
    /// Order statistic ceil(tau B) of the sorted bootstrap maxima.
    double quantile(double tau) const;
    /// True when the statistic exceeds c*(1 - alpha).
    bool rejects(double alpha) const { return statistic > quantile(1.0 - alpha); }
};

/// Sorted maxima ||Z_b||_inf of B draws Z_b ~ N(0, upsilon), where upsilon is
/// given by its eigendecomposition. Draw b uses its own counter-based stream.
std::vector<double> gaussian_max_bootstrap(const VectorXd& eigenvalues, const MatrixXd& eigenvectors, int B,
                                           std::uint64_t seed);

double order_statistic(const std::vector<double>& sorted, double tau);

/// Shared core: statistic, HAC matrix, bootstrap quantiles and p-value for
/// estimates with moment series D (d x T).
StructureTestResult structure_test_from_moments(const VectorXd& estimates, const VectorXd& null_values,
                                                const MatrixXd& moments, const TestConfig& config);

StructureTestResult cov_structure_test(const MatrixXd& U, const IndexSet& D, const VectorXd& null_values,
                                       const TestConfig& config);

struct PartialCovConfig {
    PathOptions path{};  // BIC path by default; set path.fixed_xi to pin the penalty
};

struct PartialCovEstimate {
    struct LassoMeta {
        double xi_ij = 0.0;
        double xi_ji = 0.0;
        std::size_t active_ij = 0;
        std::size_t active_ji = 0;
    };
    std::vector<IndexSet::Pair> pairs;
    VectorXd pi_hat;
    std::vector<std::pair<VectorXd, VectorXd>> residual_pairs;  // (V_ij, V_ji)
    std::vector<LassoMeta> lasso_meta;

    std::size_t max_active_set() const;
    /// Row k: V_ij,t V_ji,t - pi_hat_k.
    MatrixXd moment_series() const;
};

/// Partial covariances from LASSO residuals of U_i and U_j on U_{-ij}.
PartialCovEstimate partial_cov_estimate(const MatrixXd& U, const IndexSet& D,
                                        const PartialCovConfig& config = {});

StructureTestResult pcov_structure_test(const MatrixXd& U, const IndexSet& D, const VectorXd& null_values,
                                        const TestConfig& config, const PartialCovConfig& pcov = {});
StructureTestResult pcov_structure_test(const PartialCovEstimate& estimate, const VectorXd& null_values,
                                        const TestConfig& config);

}  // namespace farm
