#pragma once

/// @file
/// @brief GridSignal CSV format: header `t,v0,...,v{dim-1}`, one row per node, 17 significant digits.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "gnoc/timegrid.hpp"

namespace gnoc {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_csv(std::ostream& os, const GridSignal& s) {
  os << 't';
  for (std::size_t j = 0; j < s.dim(); ++j) os << ",v" << j;
  os << '\n';
  const auto& grid = s.grid();
  for (std::size_t k = 0; k < grid.node_count(); ++k) {
    os << format_double(grid.node(k));
    for (std::size_t j = 0; j < s.dim(); ++j)
      os << ',' << format_double(s.values()(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)));
    os << '\n';
  }
}

inline void write_csv(const std::string& path, const GridSignal& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_csv(os, s);
  if (!os) throw Error("write failed: " + path);
}

/// Parses a GridSignal; the time column must describe a uniform grid.
inline GridSignal read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Error("read_csv: empty input");
  std::size_t dim = 0;
  {
    std::stringstream hs(line);
    std::string cell;
    std::getline(hs, cell, ',');
    if (cell != "t") throw Error("read_csv: header must start with 't'");
    while (std::getline(hs, cell, ',')) {
      if (cell != "v" + std::to_string(dim)) throw Error("read_csv: unexpected column '" + cell + "'");
      ++dim;
    }
  }
  if (dim == 0) throw Error("read_csv: no value columns");
  std::vector<double> times;
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) {
      std::size_t used = 0;
      double v = std::stod(cell, &used);
      if (used != cell.size()) throw Error("read_csv: malformed number '" + cell + "'");
      row.push_back(v);
    }
    if (row.size() != dim + 1) throw Error("read_csv: wrong column count");
    times.push_back(row.front());
    rows.emplace_back(row.begin() + 1, row.end());
  }
  if (times.size() < 2) throw Error("read_csv: need at least two rows");
  TimeGrid grid(times.front(), times.back(), times.size() - 1);
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (std::abs(times[k] - grid.node(k)) > 1e-9 * std::max(1.0, std::abs(grid.tf())))
      throw Error("read_csv: time column is not a uniform grid");
  }
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t k = 0; k < rows.size(); ++k)
    for (std::size_t j = 0; j < dim; ++j) m(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = rows[k][j];
  return GridSignal(grid, std::move(m));
}

inline GridSignal read_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  return read_csv(is);
}

}  // namespace gnoc
