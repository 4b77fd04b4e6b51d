#pragma once

#include "farm/panel.hpp"

#include <string>

namespace farm {

enum class KernelKind { Bartlett, Parzen, QuadraticSpectral };

KernelKind parse_kernel(const std::string& text);
std::string to_string(KernelKind kind);

struct KernelSpec {
    KernelKind kind = KernelKind::Bartlett;
    double bandwidth = 1.0;  // h > 0
};

/// K(u) for u = lag / h. All kernels satisfy K(0) = 1, K(u) = K(-u), |K| <= 1.
double kernel_weight(const KernelSpec& spec, double u);

/// floor(T / 3); requires T >= 3.
int default_bandwidth(Index T);

/// Kernel-weighted long-run covariance of a d x T moment series.
///
/// upsilon = sum_{|l| < T} K(l/h) M_l with M_l = (1/T) sum_{t > l} D_t D_{t-l}'
/// and M_{-l} = M_l'. The result is symmetrised and, if its smallest
/// eigenvalue is materially negative, clipped to the PSD cone.
/// eigenvalues/eigenvectors describe the returned (adjusted) matrix.
struct HacEstimate {
    MatrixXd upsilon;
    bool psd_adjusted = false;
    double min_eigenvalue_before = 0.0;
    VectorXd eigenvalues;
    MatrixXd eigenvectors;
};

HacEstimate hac_long_run_cov(const MatrixXd& moments, const KernelSpec& spec);

/// Largest lag with a weight that can matter: |l| < h for Bartlett, |l| <= h
/// for Parzen, all lags below T for the quadratic-spectral kernel.
Index kernel_lag_support(const KernelSpec& spec, Index T);

}  // namespace farm
