#include "farm/panel.hpp"

#include "farm/error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace farm {

namespace {

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    s = s.substr(b, e - b + 1);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return std::string(s);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (;;) {
        auto pos = line.find(',', start);
        cells.push_back(trim(std::string_view(line).substr(start, pos - start)));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return cells;
}

bool parse_double(const std::string& text, double& out) {
    const char* first = text.data();
    const char* last = first + text.size();
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

bool strictly_ordered(const std::vector<std::string>& ids) {
    std::vector<double> numeric(ids.size());
    bool all_numeric = true;
    for (std::size_t k = 0; k < ids.size() && all_numeric; ++k)
        all_numeric = parse_double(ids[k], numeric[k]);
    for (std::size_t k = 1; k < ids.size(); ++k) {
        if (all_numeric ? !(numeric[k - 1] < numeric[k]) : !(ids[k - 1] < ids[k])) return false;
    }
    return true;
}

}  // namespace

Orientation parse_orientation(const std::string& text) {
    if (text == "rows-are-time" || text == "time") return Orientation::RowsAreTime;
    if (text == "rows-are-series" || text == "series") return Orientation::RowsAreSeries;
    throw InvalidInput("unknown orientation '" + text + "' (expected rows-are-time or rows-are-series)");
}

PanelData PanelData::make(MatrixXd values, std::vector<std::string> series_ids,
                          std::vector<std::string> time_ids) {
    if (values.rows() < 1) throw InvalidInput("panel needs at least one series");
    if (values.cols() < 2) throw InvalidInput("panel needs at least two periods");
    if (static_cast<Index>(series_ids.size()) != values.rows())
        throw InvalidInput("series id count does not match panel rows");
    if (static_cast<Index>(time_ids.size()) != values.cols())
        throw InvalidInput("time id count does not match panel columns");
    for (Index i = 0; i < values.rows(); ++i)
        for (Index t = 0; t < values.cols(); ++t)
            if (!std::isfinite(values(i, t)))
                throw InvalidInput("non-finite value at series " + series_ids[i] + ", time " +
                                   time_ids[t]);
    std::unordered_set<std::string> seen;
    for (const auto& id : series_ids)
        if (!seen.insert(id).second) throw InvalidInput("duplicate series id '" + id + "'");
    if (!strictly_ordered(time_ids)) throw InvalidInput("time ids are not strictly increasing");

    PanelData panel;
    panel.values_ = std::move(values);
    panel.series_ids_ = std::move(series_ids);
    panel.time_ids_ = std::move(time_ids);
    return panel;
}

PanelData PanelData::make(MatrixXd values) {
    std::vector<std::string> s(values.rows()), t(values.cols());
    for (Index i = 0; i < values.rows(); ++i) s[i] = std::to_string(i + 1);
    for (Index j = 0; j < values.cols(); ++j) t[j] = std::to_string(j + 1);
    return make(std::move(values), std::move(s), std::move(t));
}

Index PanelData::find_series(const std::string& id) const {
    for (std::size_t i = 0; i < series_ids_.size(); ++i)
        if (series_ids_[i] == id) return static_cast<Index>(i);
    return -1;
}

PanelData load_panel_csv(const std::filesystem::path& path, Orientation orientation) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open panel file " + path.string());

    std::string line;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
        if (trim(line).empty()) continue;
        rows.push_back(split_csv_line(line));
        line_numbers.push_back(line_no);
    }
    if (rows.size() < 2) throw InvalidInput(path.string() + ": need a header and at least one data row");

    const std::size_t width = rows.front().size();
    if (width < 2) throw InvalidInput(path.string() + ": need an index column and at least one data column");
    std::vector<std::string> header(rows.front().begin() + 1, rows.front().end());
    std::vector<std::string> index;
    MatrixXd body(static_cast<Index>(rows.size() - 1), static_cast<Index>(width - 1));
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& cells = rows[r];
        if (cells.size() != width)
            throw InvalidInput(path.string() + ":" + std::to_string(line_numbers[r]) + ": expected " +
                               std::to_string(width) + " cells, found " + std::to_string(cells.size()));
        index.push_back(cells[0]);
        for (std::size_t c = 1; c < width; ++c) {
            double v = 0.0;
            if (!parse_double(cells[c], v) || !std::isfinite(v))
                throw InvalidInput(path.string() + ": invalid value '" + cells[c] + "' at row " +
                                   std::to_string(line_numbers[r]) + ", column " + std::to_string(c + 1));
            body(static_cast<Index>(r - 1), static_cast<Index>(c - 1)) = v;
        }
    }
    if (orientation == Orientation::RowsAreSeries) return PanelData::make(std::move(body), index, header);
    return PanelData::make(body.transpose(), header, index);
}

std::string format_double(double value) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::general, 17);
    if (ec != std::errc()) throw NumericalError("cannot format value");
    return std::string(buf, ptr);
}

void write_panel_csv(const PanelData& panel, const std::filesystem::path& path,
                     Orientation orientation) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write " + path.string());
    const bool by_series = orientation == Orientation::RowsAreSeries;
    const auto& cols = by_series ? panel.time_ids() : panel.series_ids();
    const auto& rows = by_series ? panel.series_ids() : panel.time_ids();
    out << (by_series ? "series" : "time");
    for (const auto& c : cols) out << ',' << c;
    out << '\n';
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out << rows[r];
        for (std::size_t c = 0; c < cols.size(); ++c) {
            const double v = by_series ? panel.values()(Index(r), Index(c)) : panel.values()(Index(c), Index(r));
            out << ',' << format_double(v);
        }
        out << '\n';
    }
}

LaggedDesign build_lag_matrix(const MatrixXd& values, int p) {
    const Index n = values.rows(), T = values.cols();
    if (p < 1) throw InvalidInput("lag order must be positive");
    if (p >= T) throw InvalidInput("lag order " + std::to_string(p) + " must be below T = " + std::to_string(T));
    LaggedDesign design;
    design.targets_offset = p;
    design.regressors.resize(T - p, n * p);
    for (int lag = 1; lag <= p; ++lag) {
        design.regressors.middleCols((lag - 1) * n, n) = values.middleCols(p - lag, T - p).transpose();
        for (Index i = 0; i < n; ++i) design.column_map.emplace_back(i, lag);
    }
    return design;
}

LaggedDesign build_lag_matrix(const PanelData& panel, int p) { return build_lag_matrix(panel.values(), p); }

VectorXd lag_row(const MatrixXd& values, Index t, int p) {
    const Index n = values.rows();
    if (p < 1 || t < p || t > values.cols()) throw InvalidInput("lag_row: time index out of range");
    VectorXd row(n * p);
    for (int lag = 1; lag <= p; ++lag) row.segment((lag - 1) * n, n) = values.col(t - lag);
    return row;
}

}  // namespace farm
