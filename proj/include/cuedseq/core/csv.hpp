#pragma once

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "cuedseq/core/errors.hpp"

namespace cuedseq {

/// Formats a double with enough digits to round-trip.
inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

/// Writes `header` then one line per row. Rows are comma-joined as given.
inline void write_csv(const std::string& path, const std::string& header,
                      const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(path, "cannot open for writing");
  out << header << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << '\n';
  }
  if (!out) throw IoError(path, "write failed");
}

/// `epoch,<value_name>` history with epochs counted from 1.
inline void write_history_csv(const std::string& path, const std::string& value_name,
                              const std::vector<double>& values) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(values.size());
  for (std::size_t e = 0; e < values.size(); ++e) rows.push_back({std::to_string(e + 1), format_double(values[e])});
  write_csv(path, "epoch," + value_name, rows);
}

}  // namespace cuedseq
