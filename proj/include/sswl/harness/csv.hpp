#pragma once

/// Minimal CSV reading and writing. Fields never contain commas or quotes
/// (paths with commas are rejected on write).

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sswl/ct_dataio.hpp"

namespace sswl::harness {

/// Shortest round-trip text for a double; infinities as inf / -inf, NaN as nan.
inline std::string csv_real(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline double parse_csv_real(const std::string& s) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) throw ValidationError("bad CSV number '" + s + "'");
    return v;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return int(i);
        throw ValidationError("CSV has no column '" + name + "'");
    }

    const std::string& at(std::size_t row, const std::string& col) const { return rows.at(row).at(std::size_t(column(col))); }
    double real(std::size_t row, const std::string& col) const { return parse_csv_real(at(row, col)); }
};

inline std::string csv_text(const CsvTable& t) {
    std::string out;
    const auto line = [&](const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (fields[i].find_first_of(",\"\n") != std::string::npos)
                throw ValidationError("CSV field contains a separator: '" + fields[i] + "'");
            out += (i ? "," : "") + fields[i];
        }
        out += '\n';
    };
    line(t.header);
    for (const auto& r : t.rows) line(r);
    return out;
}

inline void write_csv(const std::filesystem::path& path, const CsvTable& t) {
    const auto text = csv_text(t);
    sswl::detail::write_file_atomic(path, {reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

inline CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string(), "cannot open CSV");
    CsvTable t;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        if (line.back() == ',') fields.emplace_back();
        if (first) {
            t.header = std::move(fields);
            first = false;
        } else {
            if (fields.size() != t.header.size())
                throw FormatError(FormatError::Kind::bad_header, path.string(), "row has " + std::to_string(fields.size()) +
                                                                                   " fields, header has " +
                                                                                   std::to_string(t.header.size()));
            t.rows.push_back(std::move(fields));
        }
    }
    if (first) throw FormatError(FormatError::Kind::truncated, path.string(), "empty CSV");
    return t;
}

}  // namespace sswl::harness
