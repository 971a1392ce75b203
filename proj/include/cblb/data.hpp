#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cblb/error.hpp"
#include "cblb/random.hpp"

namespace cblb {

/// Outcome, binary treatment and dense covariates for n units. Immutable.
class ObservationTable {
public:
    ObservationTable(Eigen::VectorXd y, std::vector<std::uint8_t> w, Eigen::MatrixXd x,
                     std::vector<std::string> covariate_names = {})
        : y_(std::move(y)), w_(std::move(w)), x_(std::move(x)), names_(std::move(covariate_names)) {
        const auto n = static_cast<std::size_t>(y_.size());
        if (w_.size() != n || static_cast<std::size_t>(x_.rows()) != n)
            throw DataError("outcome, treatment and covariate row counts differ");
        if (!names_.empty() && names_.size() != static_cast<std::size_t>(x_.cols()))
            throw DataError("covariate name count does not match covariate columns");
        if (names_.empty())
            for (Eigen::Index j = 0; j < x_.cols(); ++j) names_.push_back("x" + std::to_string(j + 1));
        for (auto v : w_) {
            if (v > 1) throw DataError("non-binary treatment value");
            n1_ += v;
        }
        if (!y_.allFinite() || !x_.allFinite()) throw DataError("table contains non-finite values");
    }

    [[nodiscard]] const Eigen::VectorXd& y() const noexcept { return y_; }
    [[nodiscard]] std::span<const std::uint8_t> w() const noexcept { return w_; }
    [[nodiscard]] const Eigen::MatrixXd& x() const noexcept { return x_; }
    [[nodiscard]] const std::vector<std::string>& covariate_names() const noexcept { return names_; }

    [[nodiscard]] std::size_t n() const noexcept { return w_.size(); }
    [[nodiscard]] std::size_t n_treated() const noexcept { return n1_; }
    [[nodiscard]] std::size_t n_control() const noexcept { return w_.size() - n1_; }
    [[nodiscard]] std::size_t p() const noexcept { return static_cast<std::size_t>(x_.cols()); }

private:
    Eigen::VectorXd y_;
    std::vector<std::uint8_t> w_;
    Eigen::MatrixXd x_;
    std::vector<std::string> names_;
    std::size_t n1_ = 0;
};

enum class NaPolicy { reject, drop };

struct CsvLoad {
    ObservationTable table;
    std::size_t dropped = 0;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                field += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.emplace_back(trim(field));
            field.clear();
        } else {
            field += c;
        }
    }
    fields.emplace_back(trim(field));
    return fields;
}

inline bool is_missing(std::string_view cell) {
    return cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan" || cell == "null";
}

inline bool parse_number(std::string_view cell, double& out) {
    if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
    const auto* end = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(cell.data(), end, out);
    return ec == std::errc() && ptr == end && std::isfinite(out);
}

} // namespace detail

/// Parses a headed CSV into a table. Row order is file order.
inline CsvLoad parse_csv(std::istream& in, std::string_view outcome_col, std::string_view treatment_col,
                         const std::vector<std::string>& covariate_cols, NaPolicy policy = NaPolicy::reject) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("CSV input is empty");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    const auto header = detail::split_csv_line(line);

    auto column = [&](std::string_view name) -> std::size_t {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw DataError("missing column '" + std::string(name) + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t y_col = column(outcome_col);
    const std::size_t w_col = column(treatment_col);
    std::vector<std::size_t> x_cols;
    for (const auto& name : covariate_cols) x_cols.push_back(column(name));

    std::vector<double> ys;
    std::vector<std::uint8_t> ws;
    std::vector<double> xs;
    std::size_t dropped = 0;
    std::size_t line_no = 1;
    std::vector<double> row_x(x_cols.size());

    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != header.size())
            throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                            " fields, found " + std::to_string(fields.size()));

        bool incomplete = false;
        auto cell_value = [&](std::size_t col, double& out) {
            const std::string_view cell = fields[col];
            if (detail::is_missing(cell)) {
                if (policy == NaPolicy::reject)
                    throw DataError("line " + std::to_string(line_no) + ": missing value in column '" +
                                    header[col] + "'");
                incomplete = true;
                return;
            }
            if (!detail::parse_number(cell, out)) {
                if (policy == NaPolicy::reject)
                    throw DataError("line " + std::to_string(line_no) + ": non-numeric value '" +
                                    std::string(cell) + "' in column '" + header[col] + "'");
                incomplete = true;
            }
        };

        double y = 0, w = 0;
        cell_value(y_col, y);
        cell_value(w_col, w);
        for (std::size_t j = 0; j < x_cols.size(); ++j) cell_value(x_cols[j], row_x[j]);

        if (!incomplete && w != 0.0 && w != 1.0)
            throw DataError("line " + std::to_string(line_no) + ": non-binary treatment value '" +
                            fields[w_col] + "'");
        if (incomplete) {
            ++dropped;
            continue;
        }
        ys.push_back(y);
        ws.push_back(static_cast<std::uint8_t>(w));
        xs.insert(xs.end(), row_x.begin(), row_x.end());
    }

    if (ys.empty()) throw DataError("table is empty after dropping incomplete rows");

    const auto n = static_cast<Eigen::Index>(ys.size());
    const auto p = static_cast<Eigen::Index>(x_cols.size());
    Eigen::MatrixXd x(n, p);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p; ++j) x(i, j) = xs[static_cast<std::size_t>(i * p + j)];
    return {ObservationTable(Eigen::Map<Eigen::VectorXd>(ys.data(), n), std::move(ws), std::move(x),
                             covariate_cols),
            dropped};
}

inline CsvLoad load_csv(const std::string& path, std::string_view outcome_col, std::string_view treatment_col,
                        const std::vector<std::string>& covariate_cols, NaPolicy policy = NaPolicy::reject) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    return parse_csv(in, outcome_col, treatment_col, covariate_cols, policy);
}

/// Writes y, w and covariates with a header; doubles round-trip exactly.
inline void write_csv(std::ostream& out, const ObservationTable& table, std::string_view outcome_col = "y",
                      std::string_view treatment_col = "w") {
    out << outcome_col << ',' << treatment_col;
    for (const auto& name : table.covariate_names()) out << ',' << name;
    out << '\n';
    char buf[32];
    auto put = [&](double v) {
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
        out.write(buf, ptr - buf);
    };
    for (std::size_t i = 0; i < table.n(); ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        put(table.y()(row));
        out << ',' << int{table.w()[i]};
        for (Eigen::Index j = 0; j < table.x().cols(); ++j) {
            out << ',';
            put(table.x()(row, j));
        }
        out << '\n';
    }
}

/// b = n^gamma rounded half-up, clamped to [2, n].
inline std::size_t subset_size(std::size_t n, double gamma) {
    if (n < 2) throw ConfigError("subset_size needs n >= 2");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
    const double raw = std::floor(std::pow(static_cast<double>(n), gamma) + 0.5);
    return std::clamp(static_cast<std::size_t>(raw), std::size_t{2}, n);
}

/// Row indices of one subset, sorted ascending.
struct Subset {
    std::vector<std::size_t> indices;
    [[nodiscard]] std::size_t size() const noexcept { return indices.size(); }
};

/// Uniform size-b subset of {0..n-1} without replacement (Floyd's algorithm).
inline Subset draw_subset(std::size_t n, std::size_t b, Stream& stream) {
    if (b < 2 || b > n) throw ConfigError("subset size must lie in [2, n]");
    Subset subset;
    subset.indices.reserve(b);
    if (b == n) {
        for (std::size_t i = 0; i < n; ++i) subset.indices.push_back(i);
        return subset;
    }
    std::unordered_set<std::size_t> chosen;
    chosen.reserve(2 * b);
    for (std::size_t j = n - b; j < n; ++j) {
        const auto t = static_cast<std::size_t>(stream.below(j + 1));
        const std::size_t pick = chosen.insert(t).second ? t : j;
        if (pick == j) chosen.insert(j);
        subset.indices.push_back(pick);
    }
    std::sort(subset.indices.begin(), subset.indices.end());
    return subset;
}

inline Subset draw_subset(const ObservationTable& table, std::size_t b, Stream& stream) {
    return draw_subset(table.n(), b, stream);
}

} // namespace cblb
