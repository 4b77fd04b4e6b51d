#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace farm {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Orientation { RowsAreTime, RowsAreSeries };

Orientation parse_orientation(const std::string& text);

/// n-by-T observation matrix, series-major. Construct through make() so the
/// invariants below always hold:
///   n >= 1, T >= 2, all entries finite, series ids unique,
///   time ids strictly increasing (numerically if all parse as numbers,
///   lexicographically otherwise).
class PanelData {
public:
    static PanelData make(MatrixXd values, std::vector<std::string> series_ids,
                          std::vector<std::string> time_ids);
    /// Labels series "1".."n" and periods "1".."T".
    static PanelData make(MatrixXd values);

    const MatrixXd& values() const noexcept { return values_; }
    const std::vector<std::string>& series_ids() const noexcept { return series_ids_; }
    const std::vector<std::string>& time_ids() const noexcept { return time_ids_; }
    Index n() const noexcept { return values_.rows(); }
    Index T() const noexcept { return values_.cols(); }

    /// Index of a series id, or -1.
    Index find_series(const std::string& id) const;

private:
    PanelData() = default;
    MatrixXd values_;
    std::vector<std::string> series_ids_;
    std::vector<std::string> time_ids_;
};

PanelData load_panel_csv(const std::filesystem::path& path, Orientation orientation);

/// Writes with 17 significant digits so doubles round-trip exactly.
void write_panel_csv(const PanelData& panel, const std::filesystem::path& path,
                     Orientation orientation);

/// Regressor matrix for one-step-ahead forecasting from p lags of every series.
/// Row k targets time t = p + k; column (lag-1)*n + i holds series i at t - lag.
struct LaggedDesign {
    MatrixXd regressors;                         // (T - p) x (n p)
    Index targets_offset = 0;                    // p
    std::vector<std::pair<Index, int>> column_map;  // (series, lag) per column
};

LaggedDesign build_lag_matrix(const PanelData& panel, int p);
LaggedDesign build_lag_matrix(const MatrixXd& values, int p);

/// Regressor row for forecasting time t: series values at t-1, ..., t-p in
/// the same column order as build_lag_matrix. Requires p <= t <= T.
VectorXd lag_row(const MatrixXd& values, Index t, int p);

/// Shortest decimal text with 17 significant digits.
std::string format_double(double value);

}  // namespace farm
