#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "baryimp/error.hpp"
#include "baryimp/panel.hpp"

namespace baryimp {

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r'))
    --b;
  return s.substr(a, b - a);
}

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

inline bool is_nan_token(const std::string& s) {
  if (s.size() != 3) return false;
  auto lower = [](char c) {
    return static_cast<char>(c >= 'A' && c <= 'Z' ? c - 'A' + 'a' : c);
  };
  return lower(s[0]) == 'n' && lower(s[1]) == 'a' && lower(s[2]) == 'n';
}

/// Shortest decimal representation that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// Reads a returns panel from CSV. Layout: header row with an index label
/// followed by asset names, one row per time step with the index in the
/// first column. Missing entries are empty cells or the token NaN.
/// Malformed input (ragged rows, duplicate names, other non-numeric
/// cells, wrong row count) raises DataError naming the location.
inline Panel read_csv(const std::string& path, const Split& split) {
  std::ifstream in(path);
  if (!in) throw DataError("read_csv: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw DataError("read_csv: '" + path + "' is empty");
  auto header = detail::split_fields(line);
  if (header.size() < 2)
    throw DataError("read_csv: header of '" + path + "' has no asset columns");
  std::vector<std::string> columns(header.begin() + 1, header.end());
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].empty())
      throw DataError("read_csv: empty asset name in header column " +
                      std::to_string(i + 2));
    for (std::size_t j = i + 1; j < columns.size(); ++j)
      if (columns[i] == columns[j])
        throw DataError("read_csv: duplicate asset name '" + columns[i] + "'");
  }
  const auto n = static_cast<Eigen::Index>(columns.size());
  std::vector<std::vector<double>> rows;
  std::vector<std::vector<bool>> miss;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_fields(line);
    if (static_cast<Eigen::Index>(fields.size()) != n + 1)
      throw DataError("read_csv: row " + std::to_string(lineno) + " has " +
                      std::to_string(fields.size() - 1) + " cells, expected " +
                      std::to_string(n));
    std::vector<double> vals(columns.size());
    std::vector<bool> m(columns.size());
    for (std::size_t i = 0; i < columns.size(); ++i) {
      const std::string& cell = fields[i + 1];
      if (cell.empty() || detail::is_nan_token(cell)) {
        vals[i] = std::numeric_limits<double>::quiet_NaN();
        m[i] = true;
        continue;
      }
      double v = 0.0;
      auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size())
        throw DataError("read_csv: non-numeric cell '" + cell + "' at row " +
                        std::to_string(lineno) + ", column '" + columns[i] +
                        "'");
      vals[i] = v;
      m[i] = false;
    }
    rows.push_back(std::move(vals));
    miss.push_back(std::move(m));
  }
  if (static_cast<Eigen::Index>(rows.size()) != split.total())
    throw DataError("read_csv: '" + path + "' has " +
                    std::to_string(rows.size()) + " data rows, split expects " +
                    std::to_string(split.total()));
  Eigen::MatrixXd values(split.total(), n);
  MaskMatrix mask(split.total(), n);
  for (Eigen::Index t = 0; t < split.total(); ++t)
    for (Eigen::Index i = 0; i < n; ++i) {
      values(t, i) = rows[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
      mask(t, i) = miss[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
    }
  return Panel(std::move(values), std::move(mask), split, std::move(columns));
}

/// Writes a panel to CSV. Missing entries become empty cells. Values are
/// printed with shortest round-trip precision, so write then read is the
/// identity on observed values, mask and column order.
inline void write_csv(const Panel& panel, const std::string& path) {
  for (const auto& c : panel.columns())
    if (c.find(',') != std::string::npos)
      throw DataError("write_csv: asset name '" + c + "' contains a comma");
  std::ofstream out(path);
  if (!out) throw DataError("write_csv: cannot open '" + path + "' for writing");
  out << "t";
  for (const auto& c : panel.columns()) out << "," << c;
  out << "\n";
  for (Eigen::Index t = 0; t < panel.rows(); ++t) {
    out << t;
    for (Eigen::Index i = 0; i < panel.cols(); ++i) {
      out << ",";
      if (!panel.is_missing(t, i))
        out << detail::format_double(panel.values()(t, i));
    }
    out << "\n";
  }
  if (!out) throw DataError("write_csv: write to '" + path + "' failed");
}

/// Writes the missingness mask as a 0/1 CSV with the same layout
/// (1 = missing).
inline void write_mask_csv(const Panel& panel, const std::string& path) {
  std::ofstream out(path);
  if (!out)
    throw DataError("write_mask_csv: cannot open '" + path + "' for writing");
  out << "t";
  for (const auto& c : panel.columns()) out << "," << c;
  out << "\n";
  for (Eigen::Index t = 0; t < panel.rows(); ++t) {
    out << t;
    for (Eigen::Index i = 0; i < panel.cols(); ++i)
      out << "," << (panel.is_missing(t, i) ? 1 : 0);
    out << "\n";
  }
  if (!out) throw DataError("write_mask_csv: write to '" + path + "' failed");
}

/// Multiplies every observed value by a constant factor, e.g. to
/// annualize daily returns on ingestion. Factor must be positive.
inline Panel scale_panel(const Panel& panel, double factor) {
  if (!(factor > 0.0) || !std::isfinite(factor))
    throw std::invalid_argument("scale_panel: factor must be positive");
  Eigen::MatrixXd values = panel.values();
  for (Eigen::Index t = 0; t < panel.rows(); ++t)
    for (Eigen::Index i = 0; i < panel.cols(); ++i)
      if (!panel.is_missing(t, i)) values(t, i) *= factor;
  return Panel(std::move(values), panel.mask(), panel.split(), panel.columns());
}

}  // namespace baryimp
