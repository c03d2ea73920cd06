#pragma once

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

namespace dspl::csv {

/// Round-trip (17 significant digit) formatting; "inf"/"-inf"/"nan" for
/// non-finite values.
std::string format_double(double v);
double parse_double(const std::string& s);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// Reads a comma-separated file with no quoting. When `expected_header` is
/// non-empty the first line must match it exactly.
Table read(const std::filesystem::path& path, const std::vector<std::string>& expected_header = {});

class Writer {
 public:
  Writer(const std::filesystem::path& path, const std::vector<std::string>& header);
  void row(const std::vector<std::string>& cells);
  /// Free-form line (used for trailing summary lines).
  void line(const std::string& text);

 private:
  std::ofstream os_;
  std::size_t width_;
};

}  // namespace dspl::csv
