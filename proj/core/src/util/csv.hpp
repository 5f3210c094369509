#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cmtf/error.hpp"

namespace cmtf::util {

/// Line-oriented reader for the unquoted comma-separated files the pipeline
/// exchanges. Tracks the 1-based line number for diagnostics.
class CsvReader {
public:
    CsvReader(std::istream& in, std::string_view source) : in_(in), source_(source) {}

    bool next(std::vector<std::string>& fields) {
        std::string line;
        while (std::getline(in_, line)) {
            ++line_;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line_ == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
            if (line.empty()) continue;
            split(line, fields);
            return true;
        }
        return false;
    }

    std::size_t line() const noexcept { return line_; }
    const std::string& source() const noexcept { return source_; }

    [[noreturn]] void fail(const std::string& msg) const {
        throw DataError(source_ + ": row " + std::to_string(line_) + ": " + msg);
    }

    /// Reads the header and maps each expected column to its field index.
    std::vector<std::size_t> header(const std::vector<std::string_view>& expected) {
        std::vector<std::string> fields;
        if (!next(fields)) throw DataError(source_ + ": empty file, expected header");
        std::vector<std::size_t> index;
        for (auto name : expected) {
            std::optional<std::size_t> found;
            for (std::size_t i = 0; i < fields.size(); ++i)
                if (fields[i] == name) found = i;
            if (!found) fail("missing column '" + std::string(name) + "'");
            index.push_back(*found);
        }
        if (fields.size() != expected.size()) fail("unexpected column count " + std::to_string(fields.size()));
        width_ = fields.size();
        return index;
    }

    void require_width(const std::vector<std::string>& fields) const {
        if (fields.size() != width_) {
            fail("expected " + std::to_string(width_) + " fields, got " + std::to_string(fields.size()));
        }
    }

    /// Empty cell -> NaN (missing); anything unparseable is an error.
    double number(const std::string& cell, std::string_view column) const {
        if (cell.empty()) return std::numeric_limits<double>::quiet_NaN();
        double v = 0.0;
        const char* first = cell.data();
        const char* last = cell.data() + cell.size();
        auto [ptr, ec] = std::from_chars(first, last, v);
        if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
            fail("cannot parse " + std::string(column) + " value '" + cell + "'");
        }
        return v;
    }

private:
    static void split(const std::string& line, std::vector<std::string>& out) {
        out.clear();
        std::size_t start = 0;
        while (true) {
            auto pos = line.find(',', start);
            std::string_view cell(line.data() + start, (pos == std::string::npos ? line.size() : pos) - start);
            while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
            while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t')) cell.remove_suffix(1);
            out.emplace_back(cell);
            if (pos == std::string::npos) break;
            start = pos + 1;
        }
    }

    std::istream& in_;
    std::string source_;
    std::size_t line_ = 0;
    std::size_t width_ = 0;
};

/// Shortest text that parses back to the same double; empty for NaN.
inline std::string format_double(double v) {
    if (std::isnan(v)) return {};
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return buf;
    }
    return std::string(buf, ptr);
}

}  // namespace cmtf::util
