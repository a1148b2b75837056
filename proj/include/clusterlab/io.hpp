#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <variant>
#include <vector>

#include "clusterlab/window.hpp"

namespace clusterlab {

class CsvError : public std::runtime_error {
public:
  CsvError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line, std::size_t lineno) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false, was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"' && cur.empty() && !was_quoted) {
      quoted = was_quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
      was_quoted = false;
    } else {
      cur += c;
    }
  }
  if (quoted) throw CsvError("unterminated quoted field", lineno);
  cells.push_back(std::move(cur));
  return cells;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size() && std::isfinite(out);
}

} // namespace detail

// Numeric CSV with an optional header row. Row order is preserved and the
// column count becomes the window dimension.
inline Window ingest_csv_stream(std::istream& in) {
  std::string line;
  std::size_t lineno = 0, dim = 0;
  std::vector<double> flat;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line, lineno);
    std::vector<double> row(cells.size());
    bool numeric = true;
    std::size_t bad = 0;
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (!detail::parse_double(cells[j], row[j])) {
        numeric = false;
        bad = j;
        break;
      }
    }
    if (first) {
      first = false;
      dim = cells.size();
      if (!numeric) continue; // header
    }
    if (cells.size() != dim)
      throw CsvError("expected " + std::to_string(dim) + " columns, found " + std::to_string(cells.size()), lineno);
    if (!numeric) throw CsvError("non-numeric cell in column " + std::to_string(bad + 1) + ": '" + cells[bad] + "'", lineno);
    flat.insert(flat.end(), row.begin(), row.end());
  }
  if (flat.empty()) throw CsvError("no numeric rows", lineno);
  return Window(std::move(flat), dim);
}

inline Window ingest_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  return ingest_csv_stream(in);
}

// Shortest representation is avoided on purpose; every float is written
// with 17 significant digits.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
  if (ec != std::errc{}) throw std::runtime_error("format_double failed");
  return std::string(buf, p);
}

using CsvCell = std::variant<std::string, double, std::int64_t, std::uint64_t>;

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string csv_cell(const CsvCell& c) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::string>) return csv_escape(v);
        else if constexpr (std::is_same_v<T, double>) return format_double(v);
        else return std::to_string(v);
      },
      c);
}

class CsvTable {
public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add(std::vector<CsvCell> row) {
    if (row.size() != header_.size()) throw std::invalid_argument("CsvTable: row width does not match header");
    rows_.push_back(std::move(row));
  }

  std::size_t rows() const { return rows_.size(); }
  const std::vector<std::string>& header() const { return header_; }

  std::string str() const {
    std::string out;
    auto line = [&](const auto& cells, auto&& fmt) {
      for (std::size_t j = 0; j < cells.size(); ++j) {
        if (j) out += ',';
        out += fmt(cells[j]);
      }
      out += '\n';
    };
    line(header_, [](const std::string& s) { return csv_escape(s); });
    for (const auto& r : rows_) line(r, [](const CsvCell& c) { return csv_cell(c); });
    return out;
  }

  void write(const std::filesystem::path& path) const { write_text(path, str()); }

  static void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
  }

private:
  std::vector<std::string> header_;
  std::vector<std::vector<CsvCell>> rows_;
};

} // namespace clusterlab
