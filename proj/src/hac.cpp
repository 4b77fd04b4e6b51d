#include "farm/hac.hpp"

#include "farm/error.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace farm {

KernelKind parse_kernel(const std::string& text) {
    if (text == "bartlett") return KernelKind::Bartlett;
    if (text == "parzen") return KernelKind::Parzen;
    if (text == "qs" || text == "quadratic-spectral") return KernelKind::QuadraticSpectral;
    throw InvalidInput("unknown kernel '" + text + "' (expected bartlett, parzen or qs)");
}

std::string to_string(KernelKind kind) {
    switch (kind) {
        case KernelKind::Bartlett: return "bartlett";
        case KernelKind::Parzen: return "parzen";
        case KernelKind::QuadraticSpectral: return "qs";
    }
    return "unknown";
}

double kernel_weight(const KernelSpec& spec, double u) {
    const double a = std::abs(u);
    switch (spec.kind) {
        case KernelKind::Bartlett: return a < 1.0 ? 1.0 - a : 0.0;
        case KernelKind::Parzen:
            if (a <= 0.5) return 1.0 - 6.0 * a * a + 6.0 * a * a * a;
            if (a <= 1.0) return 2.0 * (1.0 - a) * (1.0 - a) * (1.0 - a);
            return 0.0;
        case KernelKind::QuadraticSpectral: {
            if (a < 1e-8) return 1.0;
            const double x = 6.0 * std::numbers::pi * a / 5.0;
            return 25.0 / (12.0 * std::numbers::pi * std::numbers::pi * a * a) * (std::sin(x) / x - std::cos(x));
        }
    }
    return 0.0;
}

int default_bandwidth(Index T) {
    if (T < 3) throw InvalidInput("default_bandwidth: need T >= 3");
    return static_cast<int>(T / 3);
}

Index kernel_lag_support(const KernelSpec& spec, Index T) {
    const double h = spec.bandwidth;
    Index L = T - 1;
    switch (spec.kind) {
        case KernelKind::Bartlett: L = static_cast<Index>(std::ceil(h)) - 1; break;
        case KernelKind::Parzen: L = static_cast<Index>(std::floor(h)); break;
        case KernelKind::QuadraticSpectral: break;
    }
    return std::clamp<Index>(L, 0, T - 1);
}

HacEstimate hac_long_run_cov(const MatrixXd& moments, const KernelSpec& spec) {
    const Index d = moments.rows(), T = moments.cols();
    if (d < 1 || T < 2) throw InvalidInput("hac: need d >= 1 and T >= 2");
    if (!(spec.bandwidth > 0.0)) throw InvalidInput("hac: bandwidth must be positive");
    if (!moments.allFinite()) throw InvalidInput("hac: non-finite moment series");

    const MatrixXd D = moments.colwise() - moments.rowwise().mean();
    const Index L = kernel_lag_support(spec, T);

    // Smoothed series S_t = sum_s K((t-s)/h) D_s, so that
    // upsilon = (1/T) sum_t D_t S_t' covers every lag pair in one product.
    MatrixXd S = D;
    for (Index lag = 1; lag <= L; ++lag) {
        const double w = kernel_weight(spec, double(lag) / spec.bandwidth);
        if (w == 0.0) continue;
        S.leftCols(T - lag).noalias() += w * D.rightCols(T - lag);
        S.rightCols(T - lag).noalias() += w * D.leftCols(T - lag);
    }
    HacEstimate est;
    est.upsilon.noalias() = D * S.transpose() / double(T);
    est.upsilon = 0.5 * (est.upsilon + est.upsilon.transpose()).eval();

    Eigen::SelfAdjointEigenSolver<MatrixXd> solver(est.upsilon);
    if (solver.info() != Eigen::Success) throw NumericalError("hac: eigensolver did not converge");
    est.eigenvalues = solver.eigenvalues();
    est.eigenvectors = solver.eigenvectors();
    est.min_eigenvalue_before = est.eigenvalues.minCoeff();
    const double scale = std::max(est.eigenvalues.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
    if (est.min_eigenvalue_before < -1e-12 * scale) {
        est.psd_adjusted = true;
        est.eigenvalues = est.eigenvalues.cwiseMax(0.0);
        est.upsilon = est.eigenvectors * est.eigenvalues.asDiagonal() * est.eigenvectors.transpose();
        est.upsilon = 0.5 * (est.upsilon + est.upsilon.transpose()).eval();
    }
    return est;
}

}  // namespace farm
