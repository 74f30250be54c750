#pragma once

// Constraint map of general relativistic initial data (g, K, Lambda), its
// formal adjoint, the Killing operator and the KID residuals. Everything is
// evaluated pointwise on evaluation cells from central-difference jets and is
// zero elsewhere.

#include <cmath>
#include <limits>

#include "glue/tensor.hpp"

namespace glue {

struct InitialData {
  SymTensorField g;
  SymTensorField K;
  double Lambda = 0.0;
};

struct Curvature {
  SymTensorField Ric;
  ScalarField R;
};

struct ConstraintValues {
  ScalarField scalar_part;       // R - |K|^2 + (tr K)^2 - 2 Lambda
  CellVectorField vector_part;   // 2(-div K + d tr K), a covector

  double mu(std::size_t c) const { return 0.5 * scalar_part[c]; }
  double J(std::size_t c, int i) const { return -0.5 * vector_part(c, i); }
};

/// A lapse-shift pair; Y is stored with lower indices.
struct KidCandidate {
  ScalarField N;
  CellVectorField Y;
};

namespace detail {

inline void require_data(const InitialData& d) {
  require_same(d.g.domain, d.K.domain);
  require_positive(d.g);
}

/// Extrinsic-curvature jet: K, its covariant derivative and the usual
/// contractions.
struct CurvatureJet {
  Mat3 K{}, Kmix{};          // K_ij, K^i_j = g^ia K_aj -> Kmix[i][j]
  Mat3 Kup{};                // K^ij
  double DK[3][3][3] = {};   // nabla_k K_ij -> [k][i][j]
  double trK = 0.0, K2 = 0.0;
  double divK[3] = {};       // nabla^j K_ij
  double dtrK[3] = {};       // g^ab nabla_i K_ab
};

inline CurvatureJet curvature_jet(const MetricJet& J, const SymTensorField& Kf, std::size_t c) {
  const auto& dom = *Kf.domain;
  const int n = J.n;
  const Stencil st{dom, dom.cell_coords(c)};
  CurvatureJet E;
  E.K = sym_at(Kf, c);
  double dK[3][3][3] = {};
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      auto comp = [&](std::size_t q) { return Kf(q, i, j); };
      for (int k = 0; k < n; ++k) dK[k][i][j] = dK[k][j][i] = st.d1(comp, k);
    }
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double s = dK[k][i][j];
        for (int m = 0; m < n; ++m) s -= J.gamma[m][k][i] * E.K[m][j] + J.gamma[m][k][j] * E.K[i][m];
        E.DK[k][i][j] = s;
      }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      for (int a = 0; a < n; ++a) E.Kmix[i][j] += J.gi[i][a] * E.K[a][j];
    }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int b = 0; b < n; ++b) E.Kup[i][j] += E.Kmix[i][b] * J.gi[b][j];
  for (int i = 0; i < n; ++i) {
    E.trK += E.Kmix[i][i];
    for (int j = 0; j < n; ++j) E.K2 += E.Kup[i][j] * E.K[i][j];
  }
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) {
        E.divK[i] += J.gi[a][b] * E.DK[a][i][b];
        E.dtrK[i] += J.gi[a][b] * E.DK[i][a][b];
      }
  return E;
}

/// Lapse-shift jet: N, grad N, Hess N, Y_i and nabla_k Y_i.
struct KidJet {
  double N = 0.0;
  double dN[3] = {};
  Mat3 HN{};                 // nabla_i nabla_j N
  double Y[3] = {}, Yup[3] = {};
  Mat3 DY{};                 // nabla_k Y_i -> [k][i]
  double divY = 0.0;
};

inline KidJet kid_jet(const MetricJet& J, const KidCandidate& xi, std::size_t c) {
  const auto& dom = *xi.N.domain;
  const int n = J.n;
  const Stencil st{dom, dom.cell_coords(c)};
  KidJet X;
  X.N = xi.N[c];
  auto Nf = [&](std::size_t q) { return xi.N[q]; };
  for (int k = 0; k < n; ++k) X.dN[k] = st.d1(Nf, k);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      double s = st.d2(Nf, i, j);
      for (int k = 0; k < n; ++k) s -= J.gamma[k][i][j] * X.dN[k];
      X.HN[i][j] = X.HN[j][i] = s;
    }
  for (int i = 0; i < n; ++i) X.Y[i] = xi.Y(c, i);
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < n; ++a) X.Yup[i] += J.gi[i][a] * X.Y[a];
  for (int i = 0; i < n; ++i) {
    auto Yi = [&](std::size_t q) { return xi.Y(q, i); };
    for (int k = 0; k < n; ++k) {
      double s = st.d1(Yi, k);
      for (int m = 0; m < n; ++m) s -= J.gamma[m][k][i] * X.Y[m];
      X.DY[k][i] = s;
    }
  }
  for (int k = 0; k < n; ++k)
    for (int l = 0; l < n; ++l) X.divY += J.gi[k][l] * X.DY[k][l];
  return X;
}

template <class Fn>
void for_evaluation_cells(const GridDomain& dom, Fn&& fn) {
  parallel_for(dom.cell_count(), [&](std::size_t c) {
    if (evaluation_cell(dom, c)) fn(c);
  });
}

}  // namespace detail

inline Curvature curvature(const SymTensorField& g) {
  require_positive(g);
  const auto& dom = *g.domain;
  Curvature out{SymTensorField(g.domain), ScalarField(g.domain)};
  detail::for_evaluation_cells(dom, [&](std::size_t c) {
    const MetricJet J = metric_jet(g, c);
    store_sym(out.Ric, c, J.ric);
    out.R[c] = J.R;
  });
  return out;
}

/// Scalar curvature only.
inline ScalarField scalar_curvature(const SymTensorField& g) { return curvature(g).R; }

inline ConstraintValues constraint_map(const InitialData& d) {
  detail::require_data(d);
  const auto& dom = *d.g.domain;
  const int n = dom.dim;
  ConstraintValues cv{ScalarField(d.g.domain), CellVectorField(d.g.domain)};
  detail::for_evaluation_cells(dom, [&](std::size_t c) {
    const MetricJet J = metric_jet(d.g, c);
    const auto E = detail::curvature_jet(J, d.K, c);
    cv.scalar_part[c] = J.R - E.K2 + E.trK * E.trK - 2.0 * d.Lambda;
    for (int i = 0; i < n; ++i) cv.vector_part(c, i) = 2.0 * (-E.divK[i] + E.dtrK[i]);
  });
  return cv;
}

struct AdjointBlocks {
  SymTensorField first;
  SymTensorField second;
};

/// P*(N, Y) term by term.
inline AdjointBlocks adjoint_constraint(const InitialData& d, const KidCandidate& xi) {
  detail::require_data(d);
  require_same(d.g.domain, xi.N.domain);
  require_same(d.g.domain, xi.Y.domain);
  const auto& dom = *d.g.domain;
  const int n = dom.dim;
  AdjointBlocks out{SymTensorField(d.g.domain), SymTensorField(d.g.domain)};
  detail::for_evaluation_cells(dom, [&](std::size_t c) {
    const MetricJet J = metric_jet(d.g, c);
    const auto E = detail::curvature_jet(J, d.K, c);
    const auto X = detail::kid_jet(J, xi, c);
    double KqDY = 0.0;  // K^q_l nabla_q Y^l
    for (int q = 0; q < n; ++q)
      for (int b = 0; b < n; ++b) KqDY += E.Kup[q][b] * X.DY[q][b];
    double lapN = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) lapN += J.gi[i][j] * X.HN[i][j];
    Mat3 A{}, B{};
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double KDY = 0.0, KK = 0.0, transport = 0.0;
        for (int l = 0; l < n; ++l) {
          KDY += E.Kmix[l][i] * X.DY[j][l] + E.Kmix[l][j] * X.DY[i][l];
          KK += E.Kmix[l][i] * E.K[j][l];
          transport += (E.divK[l] * J.g[i][j] - E.DK[l][i][j]) * X.Yup[l];
        }
        A[i][j] = X.divY * E.K[i][j] - KDY + KqDY * J.g[i][j] - lapN * J.g[i][j] + X.HN[i][j] +
                  transport - X.N * J.ric[i][j] + 2.0 * X.N * KK - 2.0 * X.N * E.trK * E.K[i][j];
        B[i][j] = 2.0 * (0.5 * (X.DY[i][j] + X.DY[j][i]) - X.divY * J.g[i][j] - E.K[i][j] * X.N +
                         E.trK * X.N * J.g[i][j]);
      }
    store_sym(out.first, c, A);
    store_sym(out.second, c, B);
  });
  return out;
}

/// S(Y)_ij = (nabla_i Y_j + nabla_j Y_i) / 2 for a covector Y.
inline SymTensorField killing_operator(const SymTensorField& g, const CellVectorField& Y) {
  require_same(g.domain, Y.domain);
  require_positive(g);
  const auto& dom = *g.domain;
  const int n = dom.dim;
  KidCandidate xi{ScalarField(g.domain), Y};
  SymTensorField S(g.domain);
  detail::for_evaluation_cells(dom, [&](std::size_t c) {
    const MetricJet J = metric_jet(g, c);
    const auto X = detail::kid_jet(J, xi, c);
    Mat3 m{};
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) m[i][j] = 0.5 * (X.DY[i][j] + X.DY[j][i]);
    store_sym(S, c, m);
  });
  return S;
}

/// Weighted L2 norm sqrt(sum |T|_g^2 dmu_g) over evaluation cells.
inline double tensor_norm(const SymTensorField& T, const SymTensorField& g) {
  require_same(T.domain, g.domain);
  const auto& dom = *g.domain;
  const int n = dom.dim;
  const double vol = dom.cell_volume();
  double s = 0.0;
  for (std::size_t c = 0; c < dom.cell_count(); ++c) {
    if (!evaluation_cell(dom, c)) continue;
    Mat3 gi;
    double det;
    spd_inverse(sym_at(g, c), n, gi, det);
    const Mat3 t = sym_at(T, c);
    s += contract(t, t, gi, n) * std::sqrt(det) * vol;
  }
  return std::sqrt(s);
}

struct KidResidual {
  SymTensorField res_Y;
  SymTensorField res_N;
  double norm_Y = 0.0;
  double norm_N = 0.0;
};

/// Residuals of the KID equations. With K = 0 and Y = 0 the second one is
/// the static equation nabla nabla N = (Ric + R g / (1 - n)) N.
inline KidResidual kid_residual(const InitialData& d, const KidCandidate& xi) {
  detail::require_data(d);
  require_same(d.g.domain, xi.N.domain);
  require_same(d.g.domain, xi.Y.domain);
  const auto& dom = *d.g.domain;
  const int n = dom.dim;
  const double inv_1mn = 1.0 / (1.0 - n), inv_nm1 = 1.0 / (n - 1.0);
  KidResidual out{SymTensorField(d.g.domain), SymTensorField(d.g.domain)};
  detail::for_evaluation_cells(dom, [&](std::size_t c) {
    const MetricJet J = metric_jet(d.g, c);
    const auto E = detail::curvature_jet(J, d.K, c);
    const auto X = detail::kid_jet(J, xi, c);
    const double trace_term = inv_1mn * (J.R + E.trK * E.trK - E.K2);
    Mat3 rY{}, rN{};
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        rY[i][j] = 0.5 * (X.DY[i][j] + X.DY[j][i]) - X.N * E.K[i][j];
        double KK = 0.0, KDY = 0.0, transport = 0.0;
        for (int l = 0; l < n; ++l) {
          KK += E.Kmix[l][i] * E.K[j][l];
          KDY += E.Kmix[l][i] * X.DY[j][l] + E.Kmix[l][j] * X.DY[i][l];
          transport += (E.DK[l][i][j] + inv_nm1 * (E.divK[l] - E.dtrK[l]) * J.g[i][j]) * X.Yup[l];
        }
        const double rhs = (J.ric[i][j] - 2.0 * KK + E.trK * E.K[i][j] + trace_term * J.g[i][j]) * X.N +
                           transport + KDY;
        rN[i][j] = X.HN[i][j] - rhs;
      }
    store_sym(out.res_Y, c, rY);
    store_sym(out.res_N, c, rN);
  });
  out.norm_Y = tensor_norm(out.res_Y, d.g);
  out.norm_N = tensor_norm(out.res_N, d.g);
  return out;
}

struct EnergyCondition {
  bool holds = true;
  ScalarField margin;
};

/// mu >= |J|_g on evaluation cells, with margin mu - |J|_g.
inline EnergyCondition energy_condition(const ConstraintValues& cv, const SymTensorField& g,
                                        double tol = 1e-10) {
  require_same(cv.scalar_part.domain, g.domain);
  const auto& dom = *g.domain;
  const int n = dom.dim;
  EnergyCondition out{true, ScalarField(g.domain)};
  for (std::size_t c = 0; c < dom.cell_count(); ++c) {
    if (!evaluation_cell(dom, c)) continue;
    Mat3 gi;
    double det;
    if (!spd_inverse(sym_at(g, c), n, gi, det))
      fail(ErrorKind::MetricNotPositive, "metric is not positive-definite", static_cast<double>(c));
    double J2 = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) J2 += gi[i][j] * cv.J(c, i) * cv.J(c, j);
    out.margin[c] = cv.mu(c) - std::sqrt(J2);
    if (out.margin[c] < -tol) out.holds = false;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pairings used to state adjointness.

/// sum (s N + v_i g^ij Y_j) dmu_g over evaluation cells.
inline double pair_constraint(const ConstraintValues& cv, const KidCandidate& xi,
                              const SymTensorField& g) {
  const auto& dom = *g.domain;
  const int n = dom.dim;
  const double vol = dom.cell_volume();
  double s = 0.0;
  for (std::size_t c = 0; c < dom.cell_count(); ++c) {
    if (!evaluation_cell(dom, c)) continue;
    Mat3 gi;
    double det;
    spd_inverse(sym_at(g, c), n, gi, det);
    double v = cv.scalar_part[c] * xi.N[c];
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) v += cv.vector_part(c, i) * gi[i][j] * xi.Y(c, j);
    s += v * std::sqrt(det) * vol;
  }
  return s;
}

/// sum (<h, A>_g + <k, B>_g) dmu_g over evaluation cells.
inline double pair_tensors(const SymTensorField& h, const SymTensorField& k, const AdjointBlocks& P,
                           const SymTensorField& g) {
  const auto& dom = *g.domain;
  const int n = dom.dim;
  const double vol = dom.cell_volume();
  double s = 0.0;
  for (std::size_t c = 0; c < dom.cell_count(); ++c) {
    if (!evaluation_cell(dom, c)) continue;
    Mat3 gi;
    double det;
    spd_inverse(sym_at(g, c), n, gi, det);
    const double v = contract(sym_at(h, c), sym_at(P.first, c), gi, n) +
                     contract(sym_at(k, c), sym_at(P.second, c), gi, n);
    s += v * std::sqrt(det) * vol;
  }
  return s;
}

/// Central finite-difference directional derivative of the constraint map at
/// d along (h, k), Richardson-combined over steps eps and eps / 2 with
/// eps = cbrt(machine epsilon) / max|h, k|.
inline ConstraintValues linearized_constraint(const InitialData& d, const SymTensorField& h,
                                              const SymTensorField& k) {
  double scale = 0.0;
  for (double v : h.values) scale = std::max(scale, std::abs(v));
  for (double v : k.values) scale = std::max(scale, std::abs(v));
  ConstraintValues out{ScalarField(d.g.domain), CellVectorField(d.g.domain)};
  if (scale == 0.0) return out;
  const double eps = std::cbrt(std::numeric_limits<double>::epsilon()) / scale;
  auto central = [&](double e) {
    InitialData p = d, m = d;
    for (std::size_t i = 0; i < h.values.size(); ++i) {
      p.g.values[i] += e * h.values[i];
      m.g.values[i] -= e * h.values[i];
      p.K.values[i] += e * k.values[i];
      m.K.values[i] -= e * k.values[i];
    }
    const auto cp = constraint_map(p), cm = constraint_map(m);
    ConstraintValues r{cp.scalar_part, cp.vector_part};
    for (std::size_t i = 0; i < r.scalar_part.values.size(); ++i)
      r.scalar_part.values[i] = (cp.scalar_part.values[i] - cm.scalar_part.values[i]) / (2 * e);
    for (std::size_t i = 0; i < r.vector_part.values.size(); ++i)
      r.vector_part.values[i] = (cp.vector_part.values[i] - cm.vector_part.values[i]) / (2 * e);
    return r;
  };
  const auto a = central(eps), b = central(0.5 * eps);
  for (std::size_t i = 0; i < out.scalar_part.values.size(); ++i)
    out.scalar_part.values[i] = (4.0 * b.scalar_part.values[i] - a.scalar_part.values[i]) / 3.0;
  for (std::size_t i = 0; i < out.vector_part.values.size(); ++i)
    out.vector_part.values[i] = (4.0 * b.vector_part.values[i] - a.vector_part.values[i]) / 3.0;
  return out;
}

}  // namespace glue
