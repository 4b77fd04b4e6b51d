#include "farm/json_io.hpp"

#include "farm/error.hpp"

#include <charconv>
#include <fstream>
#include <limits>

namespace farm {

Json matrix_to_json(const MatrixXd& m) {
    Json data = Json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        data.push_back(std::move(row));
    }
    return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

MatrixXd matrix_from_json(const Json& j) {
    const auto rows = j.at("rows").get<Index>(), cols = j.at("cols").get<Index>();
    const Json& data = j.at("data");
    if (rows < 0 || cols < 0 || static_cast<Index>(data.size()) != rows)
        throw InvalidInput("matrix JSON: row count does not match data");
    MatrixXd m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        const Json& row = data[std::size_t(i)];
        if (static_cast<Index>(row.size()) != cols) throw InvalidInput("matrix JSON: ragged row " + std::to_string(i));
        for (Index k = 0; k < cols; ++k) m(i, k) = row[std::size_t(k)].get<double>();
    }
    return m;
}

Json vector_to_json(const VectorXd& v) {
    Json out = Json::array();
    for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

VectorXd vector_from_json(const Json& j) {
    VectorXd v(static_cast<Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(Index(i)) = j[i].get<double>();
    return v;
}

std::string short_number(double value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

Json to_json(const StructureTestResult& result) {
    Json quantiles = Json::object();
    for (const auto& [tau, c] : result.quantiles) quantiles[short_number(tau)] = c;
    Json out{{"test", result.kind},
             {"statistic", result.statistic},
             {"p_value", result.p_value},
             {"quantiles", std::move(quantiles)},
             {"d", result.d()},
             {"B", result.B},
             {"seed", result.seed},
             {"kernel", to_string(result.kernel.kind)},
             {"bandwidth", result.kernel.bandwidth},
             {"T", result.T},
             {"psd_adjusted", result.hac.psd_adjusted}};
    if (result.max_active_set) out["max_active_set"] = *result.max_active_set;
    return out;
}

Json to_json(const FactorSelection& selection) {
    return Json{{"method", to_string(selection.method)},
                {"kmax", selection.kmax},
                {"chosen_r", selection.chosen_r},
                {"criterion_values", selection.criterion_values}};
}

Json to_json(const LassoFit& fit) {
    return Json{{"xi", fit.xi},
                {"intercept", fit.intercept},
                {"theta", vector_to_json(fit.theta)},
                {"active_set", fit.active_set},
                {"objective", fit.objective},
                {"mean_squared_residual", fit.mean_squared_residual},
                {"iterations", fit.iterations},
                {"converged", fit.converged}};
}

LassoFit lasso_fit_from_json(const Json& j) {
    LassoFit fit;
    fit.xi = j.at("xi").is_null() ? std::numeric_limits<double>::infinity() : j.at("xi").get<double>();
    fit.intercept = j.at("intercept").get<double>();
    fit.theta = vector_from_json(j.at("theta"));
    fit.active_set = j.at("active_set").get<std::vector<Index>>();
    fit.objective = j.at("objective").get<double>();
    fit.mean_squared_residual = j.at("mean_squared_residual").get<double>();
    fit.iterations = j.at("iterations").get<int>();
    fit.converged = j.at("converged").get<bool>();
    return fit;
}

void write_json(const std::filesystem::path& path, const Json& doc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << doc.dump(2) << '\n';
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

Json read_json(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw InvalidInput(path.string() + ": " + e.what());
    }
}

}  // namespace farm
