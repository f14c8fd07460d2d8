// CSV serialization of solver paths plus atomic file output.
//
// Every double is written with %.17g, which round-trips binary64 exactly, so
// a rerun of the same configuration produces byte-identical files.  Writes go
// to a sibling temporary file followed by a rename, so readers never observe
// a half-written artifact.
//
// Field files carry one row per (time node, grid node), time-major; within a
// time block the node index is row-major, i.e. the last coordinate varies
// fastest.  Columns: time_index, x1[, x2], then the value column(s) — a
// single named column for scalar fields, name1..nameD for vector fields.

#pragma once

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfgc/coupler.hpp"
#include "mfgc/grid.hpp"

namespace mfgc {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  std::FILE* f = std::fopen(tmp.string().c_str(), "wb");
  if (!f)
    throw std::runtime_error("cannot open '" + tmp.string() + "' for writing: " +
                             std::strerror(errno));
  const std::size_t written =
      content.empty() ? 0 : std::fwrite(content.data(), 1, content.size(), f);
  const bool flushed = std::fclose(f) == 0;
  if (written != content.size() || !flushed) {
    std::remove(tmp.string().c_str());
    throw std::runtime_error("short write to '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw std::runtime_error("cannot rename '" + tmp.string() + "' to '" + path.string() +
                             "': " + ec.message());
  }
}

// Serializes a path of fields (all on one grid, one per time node) to CSV.
// value_name labels the data column(s); vector fields get name1..nameD.
template <std::size_t D>
std::string field_csv(const std::vector<GridField<D>>& path, const std::string& value_name) {
  if (path.empty()) throw ShapeError("field_csv: path is empty");
  const TorusGrid<D>& grid = path.front().grid;
  const int components = path.front().components;

  std::string out = "time_index";
  for (std::size_t i = 0; i < D; ++i) out += ",x" + std::to_string(i + 1);
  if (components == 1) {
    out += "," + value_name;
  } else {
    for (int c = 0; c < components; ++c) out += "," + value_name + std::to_string(c + 1);
  }
  out += "\n";

  for (std::size_t n = 0; n < path.size(); ++n) {
    const GridField<D>& field = path[n];
    require_same_grid(grid, field.grid, "field_csv");
    if (field.components != components)
      throw ShapeError("field_csv: component count changes along the path");
    for (std::size_t j = 0; j < grid.num_nodes(); ++j) {
      out += std::to_string(n);
      const Vec<D> x = grid.coord(j);
      for (std::size_t i = 0; i < D; ++i) out += "," + format_double(x[i]);
      for (int c = 0; c < components; ++c) out += "," + format_double(field(j, c));
      out += "\n";
    }
  }
  return out;
}

// Per-outer-iteration decrease history across all attempted homotopy stages,
// with a global 1-based iteration counter.  Column mapping: hjb_res is the
// sup-norm change of the value path, fpk_res the L1 change of the density
// path, mu_res the sup-norm change of the control path.
inline std::string convergence_csv(const std::vector<StageReport>& stages) {
  std::string out = "iteration,hjb_res,fpk_res,mu_res\n";
  int counter = 0;
  for (const StageReport& st : stages)
    for (const OuterIncrement& inc : st.increments) {
      out += std::to_string(++counter);
      out += "," + format_double(inc.value);
      out += "," + format_double(inc.density);
      out += "," + format_double(inc.control);
      out += "\n";
    }
  return out;
}

}  // namespace mfgc
