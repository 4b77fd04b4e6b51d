#pragma once

#include "farm/covtest.hpp"
#include "farm/factors.hpp"
#include "farm/lasso.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace farm {

using Json = nlohmann::ordered_json;

/// {"rows": r, "cols": c, "data": [[...], ...]} with data row-major.
Json matrix_to_json(const MatrixXd& m);
MatrixXd matrix_from_json(const Json& j);
Json vector_to_json(const VectorXd& v);
VectorXd vector_from_json(const Json& j);

/// Shortest decimal form that round-trips, used for object keys such as tau.
std::string short_number(double value);

/// Flat summary: statistic, p_value, quantiles, d, B, seed, kernel, bandwidth
/// (plus max_active_set for partial-covariance tests).
Json to_json(const StructureTestResult& result);
Json to_json(const FactorSelection& selection);
Json to_json(const LassoFit& fit);
LassoFit lasso_fit_from_json(const Json& j);

/// Pretty-printed with a trailing newline. Throws std::runtime_error on I/O failure.
void write_json(const std::filesystem::path& path, const Json& doc);
Json read_json(const std::filesystem::path& path);

}  // namespace farm
