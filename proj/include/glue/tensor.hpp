#pragma once

// Pointwise tensor calculus from cell-centered fields. Derivatives are
// second-order central differences with a one-cell stencil; every quantity
// at a cell is assembled from the local jet of the fields there.

#include <array>
#include <cmath>

#include "glue/grid.hpp"

namespace glue {

using Mat3 = std::array<std::array<double, 3>, 3>;

/// Central-difference stencils at one cell. Requires clearance >= 1.
struct Stencil {
  const GridDomain& dom;
  Index3 ci;

  template <class F>
  double d1(const F& f, int k) const {
    Index3 p = ci, m = ci;
    p[k] += 1;
    m[k] -= 1;
    return (f(dom.cell_index(p)) - f(dom.cell_index(m))) / (2.0 * dom.h);
  }

  template <class F>
  double d2(const F& f, int k, int l) const {
    const double h2 = dom.h * dom.h;
    if (k == l) {
      Index3 p = ci, m = ci;
      p[k] += 1;
      m[k] -= 1;
      return (f(dom.cell_index(p)) - 2.0 * f(dom.cell_index(ci)) + f(dom.cell_index(m))) / h2;
    }
    double s = 0.0;
    for (int a : {-1, 1}) {
      for (int b : {-1, 1}) {
        Index3 q = ci;
        q[k] += a;
        q[l] += b;
        s += a * b * f(dom.cell_index(q));
      }
    }
    return s / (4.0 * h2);
  }
};

/// Cells where the stencils fit and outputs are reported.
inline bool evaluation_cell(const GridDomain& dom, std::size_t c) {
  return dom.interior[c] && dom.clearance(dom.cell_coords(c)) >= 1;
}

inline Mat3 sym_at(const SymTensorField& T, std::size_t c) {
  const int n = T.domain->dim;
  Mat3 m{};
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m[i][j] = T(c, i, j);
  return m;
}

/// Inverse and determinant of a symmetric positive-definite matrix; returns
/// false when a leading minor is not positive.
inline bool spd_inverse(const Mat3& g, int n, Mat3& inv, double& det) {
  inv = Mat3{};
  if (n == 2) {
    det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    if (!(g[0][0] > 0.0 && det > 0.0)) return false;
    inv[0][0] = g[1][1] / det;
    inv[1][1] = g[0][0] / det;
    inv[0][1] = inv[1][0] = -g[0][1] / det;
    return true;
  }
  const double m2 = g[0][0] * g[1][1] - g[0][1] * g[1][0];
  const double c00 = g[1][1] * g[2][2] - g[1][2] * g[2][1];
  const double c01 = g[1][2] * g[2][0] - g[1][0] * g[2][2];
  const double c02 = g[1][0] * g[2][1] - g[1][1] * g[2][0];
  det = g[0][0] * c00 + g[0][1] * c01 + g[0][2] * c02;
  if (!(g[0][0] > 0.0 && m2 > 0.0 && det > 0.0)) return false;
  inv[0][0] = c00 / det;
  inv[0][1] = inv[1][0] = c01 / det;
  inv[0][2] = inv[2][0] = c02 / det;
  inv[1][1] = (g[0][0] * g[2][2] - g[0][2] * g[2][0]) / det;
  inv[1][2] = inv[2][1] = (g[0][2] * g[1][0] - g[0][0] * g[1][2]) / det;
  inv[2][2] = m2 / det;
  return true;
}

/// Fails with MetricNotPositive unless g is positive-definite on every cell.
inline void require_positive(const SymTensorField& g) {
  const auto& dom = *g.domain;
  Mat3 inv;
  double det;
  for (std::size_t c = 0; c < dom.cell_count(); ++c)
    if (!spd_inverse(sym_at(g, c), dom.dim, inv, det))
      fail(ErrorKind::MetricNotPositive, "metric is not positive-definite", static_cast<double>(c));
}

/// The metric and its derived quantities up to curvature at one cell.
struct MetricJet {
  int n = 3;
  Mat3 g{}, gi{};
  double det = 1.0;
  double dg[3][3][3] = {};             // d_k g_ij -> [k][i][j]
  double gamma[3][3][3] = {};          // Gamma^k_ij -> [k][i][j]
  Mat3 ric{};
  double R = 0.0;

  double sqrt_det() const { return std::sqrt(det); }
};

/// Second-order jet of a metric from a sampler returning g at a cell offset
/// (each offset component in {-1, 0, 1}) on a lattice of spacing h.
template <class Sampler>
MetricJet metric_jet_from(int n, double h, const Sampler& sample) {
  MetricJet J;
  J.n = n;
  J.g = sample(Index3{0, 0, 0});
  if (!spd_inverse(J.g, n, J.gi, J.det))
    fail(ErrorKind::MetricNotPositive, "metric is not positive-definite", J.det);
  const double h2 = h * h;
  double ddg[3][3][3][3] = {};  // d_k d_l g_ij -> [k][l][i][j]
  for (int k = 0; k < n; ++k) {
    Index3 p{0, 0, 0}, m{0, 0, 0};
    p[k] = 1;
    m[k] = -1;
    const Mat3 gp = sample(p), gm = sample(m);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        J.dg[k][i][j] = (gp[i][j] - gm[i][j]) / (2.0 * h);
        ddg[k][k][i][j] = (gp[i][j] - 2.0 * J.g[i][j] + gm[i][j]) / h2;
      }
    for (int l = k + 1; l < n; ++l) {
      Mat3 acc{};
      for (int a : {-1, 1})
        for (int b : {-1, 1}) {
          Index3 q{0, 0, 0};
          q[k] = a;
          q[l] = b;
          const Mat3 gq = sample(q);
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) acc[i][j] += a * b * gq[i][j];
        }
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) ddg[k][l][i][j] = ddg[l][k][i][j] = acc[i][j] / (4.0 * h2);
    }
  }
  // Christoffel symbols of the first kind and their derivatives.
  double G1[3][3][3];       // Gamma_lij = (d_i g_lj + d_j g_li - d_l g_ij) / 2
  double dG1[3][3][3][3];   // d_m Gamma_lij -> [m][l][i][j]
  for (int l = 0; l < n; ++l)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        G1[l][i][j] = 0.5 * (J.dg[i][l][j] + J.dg[j][l][i] - J.dg[l][i][j]);
        for (int m = 0; m < n; ++m)
          dG1[m][l][i][j] = 0.5 * (ddg[m][i][l][j] + ddg[m][j][l][i] - ddg[m][l][i][j]);
      }
  // d_m g^{kl} = -g^{ka} g^{lb} d_m g_ab
  double dgi[3][3][3] = {};
  for (int m = 0; m < n; ++m)
    for (int k = 0; k < n; ++k)
      for (int l = 0; l < n; ++l) {
        double s = 0.0;
        for (int a = 0; a < n; ++a)
          for (int b = 0; b < n; ++b) s -= J.gi[k][a] * J.gi[l][b] * J.dg[m][a][b];
        dgi[m][k][l] = s;
      }
  double dgamma[3][3][3][3] = {};  // d_m Gamma^k_ij -> [m][k][i][j]
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int l = 0; l < n; ++l) s += J.gi[k][l] * G1[l][i][j];
        J.gamma[k][i][j] = s;
        for (int m = 0; m < n; ++m) {
          double t = 0.0;
          for (int l = 0; l < n; ++l) t += dgi[m][k][l] * G1[l][i][j] + J.gi[k][l] * dG1[m][l][i][j];
          dgamma[m][k][i][j] = t;
        }
      }
  // R_ij = d_k Gamma^k_ij - d_j Gamma^k_ik + Gamma^k_kl Gamma^l_ij - Gamma^k_jl Gamma^l_ik
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < n; ++k) {
        s += dgamma[k][k][i][j] - dgamma[j][k][i][k];
        for (int l = 0; l < n; ++l)
          s += J.gamma[k][k][l] * J.gamma[l][i][j] - J.gamma[k][j][l] * J.gamma[l][i][k];
      }
      J.ric[i][j] = s;
    }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) J.R += J.gi[i][j] * J.ric[i][j];
  return J;
}

inline MetricJet metric_jet(const SymTensorField& gf, std::size_t c) {
  const auto& dom = *gf.domain;
  const Index3 ci = dom.cell_coords(c);
  return metric_jet_from(dom.dim, dom.h, [&](const Index3& off) {
    Index3 q = ci;
    for (int a = 0; a < 3; ++a) q[a] += off[a];
    return sym_at(gf, dom.cell_index(q));
  });
}

/// Full contraction A_ij B_ab g^ia g^jb.
inline double contract(const Mat3& A, const Mat3& B, const Mat3& gi, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) s += A[i][j] * B[a][b] * gi[i][a] * gi[j][b];
  return s;
}

inline void store_sym(SymTensorField& T, std::size_t c, const Mat3& m) {
  const int n = T.domain->dim;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) T(c, i, j) = 0.5 * (m[i][j] + m[j][i]);
}

/// Identity metric on every cell.
inline SymTensorField flat_metric(const DomainPtr& dom) {
  SymTensorField g(dom);
  for (std::size_t c = 0; c < dom->cell_count(); ++c)
    for (int i = 0; i < dom->dim; ++i) g(c, i, i) = 1.0;
  return g;
}

}  // namespace glue
