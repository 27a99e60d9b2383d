#pragma once

// CSV tables with a '#' metadata header, written atomically as a bundle.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "eitcool/errors.hpp"

namespace eitcool::csv {

/// Twelve significant digits, printed the same way on every run.
inline std::string format(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

struct Table {
    std::string file_name;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    void add(std::vector<std::string> row) {
        if (row.size() != columns.size()) throw NumericalError("csv: row width does not match " + file_name);
        rows.push_back(std::move(row));
    }

    std::string render(const std::vector<std::pair<std::string, std::string>>& metadata) const {
        std::ostringstream out;
        for (const auto& [k, v] : metadata) out << "# " << k << ": " << v << "\n";
        for (size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
        out << "\n";
        for (const auto& r : rows) {
            for (size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << r[i];
            out << "\n";
        }
        return out.str();
    }
};

/// Writes every table to a temporary file first and renames them only once all
/// writes succeeded, so a failure leaves no partial bundle behind.
inline std::vector<std::filesystem::path> write_bundle(
    const std::filesystem::path& dir, const std::vector<Table>& tables,
    const std::vector<std::pair<std::string, std::string>>& metadata) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
    std::vector<std::pair<fs::path, fs::path>> staged;
    auto cleanup = [&] {
        for (const auto& [tmp, dst] : staged) fs::remove(tmp, ec);
    };
    for (const auto& t : tables) {
        const fs::path dst = dir / t.file_name;
        const fs::path tmp = dir / (t.file_name + ".tmp");
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        staged.emplace_back(tmp, dst);
        out << t.render(metadata);
        out.close();
        if (!out) {
            cleanup();
            throw ConfigError("cannot write " + tmp.string());
        }
    }
    std::vector<fs::path> written;
    for (const auto& [tmp, dst] : staged) {
        fs::rename(tmp, dst, ec);
        if (ec) {
            cleanup();
            throw ConfigError("cannot move " + tmp.string() + " into place: " + ec.message());
        }
        written.push_back(dst);
    }
    return written;
}

/// Two or more numeric columns from a CSV file; '#' lines and a non-numeric
/// header row are skipped.
inline std::vector<std::vector<double>> read_numeric_columns(const std::string& path, size_t min_columns) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open data file");
    std::vector<std::vector<double>> cols;
    std::string line;
    int line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<double> values;
        std::stringstream ss(line);
        std::string cell;
        bool numeric = true;
        while (std::getline(ss, cell, ',')) {
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            while (end && *end == ' ') ++end;
            if (end == cell.c_str() || *end != '\0') {
                numeric = false;
                break;
            }
            values.push_back(v);
        }
        if (!numeric) {
            if (header_seen || !cols.empty())
                throw ConfigError(path + ":" + std::to_string(line_no) + ": non-numeric value");
            header_seen = true;
            continue;
        }
        if (values.size() < min_columns)
            throw ConfigError(path + ":" + std::to_string(line_no) + ": expected at least " +
                              std::to_string(min_columns) + " columns");
        if (cols.empty()) cols.resize(values.size());
        if (values.size() != cols.size())
            throw ConfigError(path + ":" + std::to_string(line_no) + ": inconsistent column count");
        for (size_t i = 0; i < values.size(); ++i) cols[i].push_back(values[i]);
    }
    if (cols.empty()) throw ConfigError(path + ": no data rows");
    return cols;
}

}  // namespace eitcool::csv
