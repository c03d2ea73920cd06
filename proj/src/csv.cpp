#include "dspl/csv.hpp"

#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dspl::csv {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  if (s == "nan") return NAN;
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("csv: bad number '" + s + "'");
  return v;
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

Table read(const std::filesystem::path& path, const std::vector<std::string>& expected_header) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("csv: cannot open " + path.string());
  Table t;
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("csv: empty file " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  t.header = split(line);
  if (!expected_header.empty() && t.header != expected_header) {
    throw std::runtime_error("csv: unexpected header in " + path.string() + ": '" + line + "'");
  }
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != t.header.size()) {
      throw std::runtime_error("csv: " + path.string() + ":" + std::to_string(lineno) + " has " +
                               std::to_string(cells.size()) + " cells, expected " +
                               std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  return t;
}

Writer::Writer(const std::filesystem::path& path, const std::vector<std::string>& header)
    : os_(path, std::ios::trunc), width_(header.size()) {
  if (!os_) throw std::runtime_error("csv: cannot write " + path.string());
  row(header);
}

void Writer::row(const std::vector<std::string>& cells) {
  if (cells.size() != width_) throw std::logic_error("csv: row width mismatch");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) os_ << ',';
    os_ << cells[i];
  }
  os_ << '\n';
}

void Writer::line(const std::string& text) { os_ << text << '\n'; }

}  // namespace dspl::csv
