#pragma once

// Delimited return files: header row, ISO date in the first column, one
// numeric column per asset.

#include <Eigen/Dense>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "malrisk/error.hpp"

namespace malrisk::pipeline {

struct ReturnTable {
    std::vector<std::string> dates;
    std::vector<std::string> columns;
    Eigen::MatrixXd values;  // rows = dates

    Eigen::Index rows() const { return values.rows(); }
    Eigen::Index cols() const { return values.cols(); }
};

/// Fixed 10-significant-digit rendering used by every report table.
inline std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string> split(std::string_view line, char delim) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(delim, start);
        out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline char detect_delimiter(std::string_view header) {
    for (char c : {',', ';', '\t'})
        if (header.find(c) != std::string_view::npos) return c;
    return ',';
}

inline bool parse_double(std::string_view s, double& out) {
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace detail

/// YYYY-MM-DD with a valid calendar day.
inline bool is_iso_date(std::string_view s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
    for (int i : {0, 1, 2, 3, 5, 6, 8, 9})
        if (s[static_cast<std::size_t>(i)] < '0' || s[static_cast<std::size_t>(i)] > '9') return false;
    const int y = std::stoi(std::string(s.substr(0, 4)));
    const int m = std::stoi(std::string(s.substr(5, 2)));
    const int d = std::stoi(std::string(s.substr(8, 2)));
    if (m < 1 || m > 12 || d < 1) return false;
    static constexpr int kDays[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    const bool leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
    return d <= kDays[m - 1] + (m == 2 && leap ? 1 : 0);
}

/// Parses a return table. `columns` selects assets by header name (all
/// non-date columns when empty). `source` names the input in messages.
inline ReturnTable parse_returns(std::istream& in, const std::vector<std::string>& columns = {},
                                 const std::string& source = "input") {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!detail::trim(line).empty()) break;
    }
    if (detail::trim(line).empty()) throw ValidationError(source + ": empty file");
    const char delim = detail::detect_delimiter(line);
    const std::vector<std::string> header = detail::split(line, delim);
    if (header.size() < 2) throw ValidationError(source + ": header needs a date column and at least one asset");
    std::vector<std::size_t> pick;
    ReturnTable tab;
    if (columns.empty()) {
        for (std::size_t i = 1; i < header.size(); ++i) {
            pick.push_back(i);
            tab.columns.push_back(header[i]);
        }
    } else {
        for (const auto& c : columns) {
            std::size_t found = 0;
            for (std::size_t i = 1; i < header.size(); ++i)
                if (header[i] == c) found = i;
            if (found == 0) throw ValidationError(source + ": column '" + c + "' not found in header");
            pick.push_back(found);
            tab.columns.push_back(c);
        }
    }
    std::vector<double> flat;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        ++row;
        const std::vector<std::string> cells = detail::split(line, delim);
        const std::string where = source + ": row " + std::to_string(row) + " (line " + std::to_string(line_no) + ")";
        if (cells.size() != header.size())
            throw ValidationError(where + ": expected " + std::to_string(header.size()) + " fields, found " +
                                  std::to_string(cells.size()));
        if (!is_iso_date(cells[0])) throw ValidationError(where + ": '" + cells[0] + "' is not an ISO date (YYYY-MM-DD)");
        if (!tab.dates.empty() && !(cells[0] > tab.dates.back()))
            throw ValidationError(where + ": date " + cells[0] + " does not follow " + tab.dates.back() +
                                  " (dates must be strictly increasing)");
        tab.dates.push_back(cells[0]);
        for (std::size_t k = 0; k < pick.size(); ++k) {
            const std::string& cell = cells[pick[k]];
            if (cell.empty()) throw ValidationError(where + ", column '" + tab.columns[k] + "': empty value");
            double v = 0.0;
            if (!detail::parse_double(cell, v) || !std::isfinite(v))
                throw ValidationError(where + ", column '" + tab.columns[k] + "': cannot parse '" + cell + "'");
            flat.push_back(v);
        }
    }
    if (tab.dates.empty()) throw ValidationError(source + ": no data rows");
    const auto n = static_cast<Eigen::Index>(tab.dates.size());
    const auto p = static_cast<Eigen::Index>(pick.size());
    tab.values = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(flat.data(), n, p);
    return tab;
}

inline ReturnTable load_returns(const std::filesystem::path& path, const std::vector<std::string>& columns = {}) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open input file " + path.string());
    return parse_returns(in, columns, path.string());
}

inline void write_returns(const std::filesystem::path& path, const ReturnTable& tab) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << "date";
    for (const auto& c : tab.columns) out << ',' << c;
    out << '\n';
    for (Eigen::Index t = 0; t < tab.rows(); ++t) {
        out << tab.dates[static_cast<std::size_t>(t)];
        for (Eigen::Index j = 0; j < tab.cols(); ++j) out << ',' << format_number(tab.values(t, j));
        out << '\n';
    }
    if (!out) throw Error("write failed for " + path.string());
}

/// Weekly synthetic calendar (every 7 days from `start`), for simulated data.
inline std::vector<std::string> weekly_dates(std::size_t n, int year = 2000, int month = 1, int day = 7) {
    using namespace std::chrono;
    sys_days d{std::chrono::year{year} / month / day};
    std::vector<std::string> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i, d += days{7}) {
        const year_month_day ymd{d};
        char buf[32];
        std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                      static_cast<unsigned>(ymd.day()));
        out.emplace_back(buf);
    }
    return out;
}

}  // namespace malrisk::pipeline
