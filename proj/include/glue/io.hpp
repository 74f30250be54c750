#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "glue/error.hpp"
#include "glue/grid.hpp"

namespace glue::io {

/// Shortest form that round-trips a double: printf %.17g, with nan/inf
/// spelled the same on every platform.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::ConfigError, "cannot open output file " + path);
  return out;
}

/// Fields quoted only when they contain a separator, quote or newline.
inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add_row(std::vector<std::string> row) {
    if (row.size() != header_.size())
      fail(ErrorKind::DomainMismatch, "csv row width differs from header", static_cast<double>(row.size()));
    rows_.push_back(std::move(row));
  }
  void add_row(const std::vector<double>& row) {
    std::vector<std::string> s;
    for (double v : row) s.push_back(format_double(v));
    add_row(std::move(s));
  }

  std::string str() const {
    std::string out;
    auto line = [&out](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size(); ++i) {
        if (i) out += ',';
        out += csv_escape(r[i]);
      }
      out += '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return out;
  }
  void write(const std::string& path) const { open_output(path) << str(); }

  const std::vector<std::string>& header() const { return header_; }
  std::size_t rows() const { return rows_.size(); }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// ---------------------------------------------------------------------------
// Legacy VTK, structured points with one value (or vector) per cell.

struct CellArray {
  std::string name;
  int components = 1;  // 1 or 3
  std::vector<double> values;  // cell-major, `components` per cell
};

/// Face field averaged to cell centers, padded to three components.
inline CellArray cell_average(const std::string& name, const VectorField& F) {
  const auto& dom = *F.domain;
  CellArray a{name, 3, std::vector<double>(3 * dom.cell_count(), 0.0)};
  for (std::size_t c = 0; c < dom.cell_count(); ++c) {
    const auto ci = dom.cell_coords(c);
    for (int d = 0; d < dom.dim; ++d) {
      Index3 hi = ci;
      hi[d] += 1;
      a.values[3 * c + d] = 0.5 * (F.comp[d][dom.face_index(d, ci[0], ci[1], ci[2])] +
                                   F.comp[d][dom.face_index(d, hi[0], hi[1], hi[2])]);
    }
  }
  return a;
}

inline CellArray cell_scalar(const std::string& name, const ScalarField& s) {
  return {name, 1, s.values};
}

/// One scalar array per stored component, named name_ab.
inline std::vector<CellArray> cell_tensor(const std::string& name, const SymTensorField& T) {
  const int n = T.domain->dim;
  std::vector<CellArray> out;
  for (int a = 0; a < n; ++a)
    for (int b = a; b < n; ++b) {
      CellArray arr{name + "_" + std::to_string(a) + std::to_string(b), 1, {}};
      arr.values.reserve(T.domain->cell_count());
      for (std::size_t c = 0; c < T.domain->cell_count(); ++c) arr.values.push_back(T(c, a, b));
      out.push_back(std::move(arr));
    }
  return out;
}

inline std::string vtk_string(const GridDomain& dom, const std::vector<CellArray>& arrays) {
  std::string s = "# vtk DataFile Version 3.0\nglue cell data\nASCII\nDATASET STRUCTURED_POINTS\n";
  const int nz = dom.dim == 3 ? dom.n[2] + 1 : 1;
  s += "DIMENSIONS " + std::to_string(dom.n[0] + 1) + " " + std::to_string(dom.n[1] + 1) + " " +
       std::to_string(nz) + "\n";
  s += "ORIGIN " + format_double(dom.lo[0]) + " " + format_double(dom.lo[1]) + " " +
       format_double(dom.dim == 3 ? dom.lo[2] : 0.0) + "\n";
  const std::string h = format_double(dom.h);
  s += "SPACING " + h + " " + h + " " + h + "\n";
  s += "CELL_DATA " + std::to_string(dom.cell_count()) + "\n";
  s += "SCALARS interior int 1\nLOOKUP_TABLE default\n";
  for (std::size_t c = 0; c < dom.cell_count(); ++c) s += dom.interior[c] ? "1\n" : "0\n";
  for (const auto& a : arrays) {
    if (a.values.size() != dom.cell_count() * a.components)
      fail(ErrorKind::DomainMismatch, "vtk array " + a.name + " has the wrong length",
           static_cast<double>(a.values.size()));
    if (a.components == 1) {
      s += "SCALARS " + a.name + " double 1\nLOOKUP_TABLE default\n";
      for (double v : a.values) s += format_double(v) + "\n";
    } else {
      s += "VECTORS " + a.name + " double\n";
      for (std::size_t c = 0; c < dom.cell_count(); ++c)
        s += format_double(a.values[3 * c]) + " " + format_double(a.values[3 * c + 1]) + " " +
             format_double(a.values[3 * c + 2]) + "\n";
    }
  }
  return s;
}

inline void write_vtk(const std::string& path, const GridDomain& dom,
                      const std::vector<CellArray>& arrays) {
  open_output(path) << vtk_string(dom, arrays);
}

}  // namespace glue::io
