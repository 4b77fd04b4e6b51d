#pragma once

#include "farm/panel.hpp"

#include <string>
#include <vector>

namespace farm {

/// Principal-component estimate of R = Lambda F' + U.
///
/// factors is T x r with factors'factors / T = I, loadings = R factors / T,
/// residuals = R - loadings factors'. eigenvalues are the top r eigenvalues
/// of R'R / T in descending order. Each factor column is signed so that the
/// loading entry of largest magnitude is positive.
struct FactorEstimate {
    MatrixXd factors;
    MatrixXd loadings;
    VectorXd eigenvalues;
    MatrixXd residuals;
    int r = 0;
};

FactorEstimate pca_factors(const MatrixXd& residual_panel, int r);

/// The r = 0 estimate: no factors, residuals equal to the input.
FactorEstimate no_factors(const MatrixXd& residual_panel);

/// Descending eigenvalues of R'R / T (equivalently R R' / T), at most
/// min(n, T) of them. Computed from the smaller Gram matrix.
VectorXd gram_eigenvalues(const MatrixXd& residual_panel);

enum class FactorMethod { Fixed, EigenvalueRatio, IC1, IC2, IC3, IC4 };

/// How to choose the factor count. kmax <= 0 means default_kmax(n, T).
struct FactorRule {
    FactorMethod method = FactorMethod::EigenvalueRatio;
    int fixed_r = 0;
    int kmax = 0;

    static FactorRule fixed(int r) { return {FactorMethod::Fixed, r, 0}; }
};

/// Accepts "er", "ic1".."ic4", "fixed:<r>" (case-insensitive).
FactorRule parse_factor_rule(const std::string& text);
std::string to_string(const FactorRule& rule);
std::string to_string(FactorMethod method);

struct FactorSelection {
    FactorMethod method = FactorMethod::Fixed;
    int kmax = 0;
    int chosen_r = 0;
    std::vector<double> criterion_values;  // index k-1 holds the value at k
};

/// min(20, floor(min(n, T) / 2)), at least 1.
int default_kmax(Index n, Index T);

/// argmax_k eigenvalues[k-1] / eigenvalues[k] over k = 1..kmax; ties go to the
/// smallest k.
int eigenvalue_ratio_select(const VectorXd& eigenvalues, int kmax);

/// Bai-Ng information criteria evaluated at r = 1..kmax; the minimiser wins,
/// ties go to the smallest r.
FactorSelection ic_select(const MatrixXd& residual_panel, int kmax, FactorMethod criterion);

/// Resolves a rule against a residual panel (fixed rules pass through).
FactorSelection select_factor_count(const MatrixXd& residual_panel, const FactorRule& rule);

/// Mean squared reconstruction error S(r) = ||R - Lambda_r F_r'||_F^2 / (nT)
/// for r = 0..rmax, from the eigenvalues of R'R/T.
std::vector<double> reconstruction_errors(const MatrixXd& residual_panel, int rmax);

/// Rotation H = T^-1 V^-1 Fhat' F Lambda' Lambda relating estimated factors to
/// the truth (simulation diagnostics only).
MatrixXd rotation_matrix(const MatrixXd& estimated_factors, const MatrixXd& true_factors,
                         const MatrixXd& true_loadings, const VectorXd& eigenvalues);

}  // namespace farm
