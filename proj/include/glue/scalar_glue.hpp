#pragma once

// Time-symmetric gluing: find dg supported in the region with
// R[g_chi + dg] = chi R(g_hat) + (1 - chi) R(g).
//
// The linearization DR is probed column by column from finite differences of
// the curvature routine, so the linear solves and the nonlinear residual use
// the same discrete R. DR* is the exact adjoint of the probed DR in the
// discrete L^2(dmu_g) pairings, which makes the weighted normal operator
// DR phi^2 psi^2 DR* symmetric.

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "glue/constraints.hpp"
#include "glue/linalg.hpp"
#include "glue/weights.hpp"

namespace glue {

/// chi R(g_hat) + (1 - chi) R(g) on the evaluation cells.
inline ScalarField interpolated_target(const SymTensorField& g, const SymTensorField& g_hat,
                                       const ScalarField& chi) {
  require_same(g.domain, g_hat.domain);
  require_same(g.domain, chi.domain);
  const auto R = scalar_curvature(g);
  const auto Rh = scalar_curvature(g_hat);
  ScalarField t(g.domain);
  for (std::size_t c = 0; c < t.values.size(); ++c) t[c] = chi[c] * Rh[c] + (1.0 - chi[c]) * R[c];
  return t;
}

/// g_chi = chi g_hat + (1 - chi) g, on every cell.
inline SymTensorField blend_metrics(const SymTensorField& g, const SymTensorField& g_hat,
                                    const ScalarField& chi) {
  require_same(g.domain, g_hat.domain);
  SymTensorField out(g.domain);
  const int nc = out.ncomp();
  for (std::size_t c = 0; c < g.domain->cell_count(); ++c)
    for (int p = 0; p < nc; ++p) {
      const std::size_t k = c * nc + p;
      out.values[k] = chi[c] * g_hat.values[k] + (1.0 - chi[c]) * g.values[k];
    }
  return out;
}

/// (1 - |x-c|^2/w^2)^4 inside the ball, zero outside.
inline double quartic_bump(const Vec3& x, const Vec3& c, double w) {
  const double t = 1.0 - dot(x - c, x - c) / (w * w);
  return t > 0.0 ? t * t * t * t : 0.0;
}

/// Quartic bumps of alternating sign on the x and y axes at radius rc. By
/// parity and the sign pattern, its moments against 1 and x^i vanish, so it
/// carries no component along the flat static potentials.
inline double quadrupole_bump(const Vec3& x, double rc = 1.8, double w = 0.6) {
  return quartic_bump(x, {rc, 0, 0}, w) + quartic_bump(x, {-rc, 0, 0}, w) -
         quartic_bump(x, {0, rc, 0}, w) - quartic_bump(x, {0, -rc, 0}, w);
}

/// (1 + eps b)^4 delta at the cell centers.
template <class F>
SymTensorField conformal_bump_metric(const DomainPtr& dom, double eps, F&& b) {
  SymTensorField g(dom);
  for (std::size_t c = 0; c < dom->cell_count(); ++c) {
    const double f = std::pow(1.0 + eps * b(dom->cell_center(c)), 4);
    for (int i = 0; i < dom->dim; ++i) g(c, i, i) = f;
  }
  return g;
}

/// Unknowns and equations of the linearized problem: dg lives on the region
/// cells, its scalar curvature change on the region grown by one cell.
class ScalarGlueLayout {
 public:
  explicit ScalarGlueLayout(const DomainPtr& dom) : dom_(dom) {
    const auto& D = *dom;
    col_.assign(D.cell_count(), -1);
    row_.assign(D.cell_count(), -1);
    for (std::size_t c = 0; c < D.cell_count(); ++c) {
      if (!D.interior[c]) continue;
      col_[c] = static_cast<long>(cols_.size());
      cols_.push_back(c);
    }
    if (cols_.empty()) fail(ErrorKind::EmptyRegion, "the gluing region has no cells");
    for (std::size_t c = 0; c < D.cell_count(); ++c) {
      bool near = false;
      for_neighbors(c, [&](std::size_t q) { near = near || D.interior[q]; });
      if (!near) continue;
      if (!evaluation_cell_box(c))
        fail(ErrorKind::ParamOutOfRange, "the grid needs two cells of margin around the region");
      row_[c] = static_cast<long>(rows_.size());
      rows_.push_back(c);
    }
  }

  const DomainPtr& domain() const { return dom_; }
  const std::vector<std::size_t>& rows() const { return rows_; }
  const std::vector<std::size_t>& cols() const { return cols_; }
  long row(std::size_t c) const { return row_[c]; }
  long col(std::size_t c) const { return col_[c]; }

  /// Calls f on every cell of the 3^dim block around c (c included).
  template <class F>
  void for_neighbors(std::size_t c, F&& f) const {
    const auto& D = *dom_;
    const Index3 ci = D.cell_coords(c);
    const int rz = D.dim == 3 ? 1 : 0;
    for (int k = -rz; k <= rz; ++k)
      for (int j = -1; j <= 1; ++j)
        for (int i = -1; i <= 1; ++i) {
          const Index3 q{ci[0] + i, ci[1] + j, ci[2] + k};
          if (D.in_box(q)) f(D.cell_index(q));
        }
  }

 private:
  bool evaluation_cell_box(std::size_t c) const {
    const auto& D = *dom_;
    const Index3 ci = D.cell_coords(c);
    for (int a = 0; a < D.dim; ++a)
      if (ci[a] < 1 || ci[a] > D.n[a] - 2) return false;
    return true;
  }

  DomainPtr dom_;
  std::vector<std::size_t> rows_, cols_;
  std::vector<long> row_, col_;
};

namespace detail {

/// R on the layout rows.
inline Vector rows_curvature(const ScalarGlueLayout& L, const SymTensorField& g) {
  const auto& rows = L.rows();
  Vector R(rows.size());
  parallel_for(rows.size(), [&](std::size_t r) { R[r] = metric_jet(g, rows[r]).R; });
  return R;
}

/// Gram matrix of the tensor pairing g^ia g^jb h_ij k_ab in packed components.
inline Eigen::MatrixXd packed_pairing(const Mat3& gi, int n) {
  const int nc = sym_components(n);
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(nc, nc);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) Q(sym_index(i, j, n), sym_index(a, b, n)) += gi[i][a] * gi[j][b];
  return Q;
}

}  // namespace detail

/// Sparse matrix of the finite-difference linearization of R at g, mapping
/// packed dg on the layout columns to dR on the layout rows.
inline Eigen::SparseMatrix<double> probe_linearized_curvature(const ScalarGlueLayout& L,
                                                              const SymTensorField& g) {
  const auto& D = *L.domain();
  const int n = D.dim, nc = sym_components(n);
  double scale = 0.0;
  for (double v : g.values) scale = std::max(scale, std::abs(v));
  const double t = 1e-3 * scale;
  std::vector<Eigen::Triplet<double>> trip;
  SymTensorField work = g;
  auto perturbed = [&](const std::vector<std::size_t>& cells, int p, double s) {
    for (std::size_t c : cells) work.values[c * nc + p] = g.values[c * nc + p] + s;
    Vector R = detail::rows_curvature(L, work);
    for (std::size_t c : cells) work.values[c * nc + p] = g.values[c * nc + p];
    return R;
  };
  const int colors_z = n == 3 ? 3 : 1;
  for (int cz = 0; cz < colors_z; ++cz)
    for (int cy = 0; cy < 3; ++cy)
      for (int cx = 0; cx < 3; ++cx) {
        const Index3 color{cx, cy, cz};
        std::vector<std::size_t> cells;
        for (std::size_t c : L.cols()) {
          const Index3 ci = D.cell_coords(c);
          if (ci[0] % 3 == cx && ci[1] % 3 == cy && (n == 2 || ci[2] % 3 == cz)) cells.push_back(c);
        }
        if (cells.empty()) continue;
        for (int p = 0; p < nc; ++p) {
          // Central differences at t and t/2, combined to fourth order.
          const Vector d1 = (perturbed(cells, p, t) - perturbed(cells, p, -t)) / (2 * t);
          const Vector d2 = (perturbed(cells, p, t / 2) - perturbed(cells, p, -t / 2)) / t;
          const Vector d = (4.0 * d2 - d1) / 3.0;
          for (std::size_t r = 0; r < L.rows().size(); ++r) {
            if (d[r] == 0.0) continue;
            // The one perturbed cell within reach of this row.
            Index3 q = D.cell_coords(L.rows()[r]);
            for (int a = 0; a < n; ++a) {
              int off = ((color[a] - q[a]) % 3 + 3) % 3;
              if (off == 2) off = -1;
              q[a] += off;
            }
            const long col = L.col(D.cell_index(q));
            if (col >= 0) trip.emplace_back(static_cast<int>(r), static_cast<int>(col * nc + p), d[r]);
          }
        }
      }
  Eigen::SparseMatrix<double> A(static_cast<Eigen::Index>(L.rows().size()),
                                static_cast<Eigen::Index>(L.cols().size() * nc));
  A.setFromTriplets(trip.begin(), trip.end());
  return A;
}

struct LinearCorrection {
  SymTensorField dg;
  ScalarField N;
  /// sup |DR(dg) - residual| / sup |residual|, with DR the probed matrix.
  double linear_residual = 0.0;
  /// sup of the dmu-orthogonal projection of the residual onto the excluded
  /// directions, relative to sup |residual|.
  double solvability_defect = 0.0;
};

/// The affine functions are the static potentials of flat space. Off a flat
/// base they continue into the n+1 lowest modes of the normal operator, with
/// eigenvalues of order |g - delta|^2. `Kernel` excludes those modes only
/// while they are numerically null and solves through them otherwise;
/// `NearKernel` always excludes them, which exposes the residual's component
/// along them as a defect.
enum class Deflation { Kernel, NearKernel };

struct LinearCorrectionOptions {
  Deflation deflation = Deflation::Kernel;
  /// Largest Jacobi-scaled eigenvalue treated as null.
  double kernel_tol = 1e-13;
  /// Fail with NetSourceMismatch when the solvability defect exceeds
  /// `defect_tol`; otherwise solve modulo the affine directions.
  bool strict = false;
  double defect_tol = 1e-6;
};

/// Solves DR(phi^2 psi^2 DR*(N)) = residual modulo the affine functions and
/// returns dg = phi^2 psi^2 DR*(N). `residual` is read on the layout rows.
inline LinearCorrection linear_correction(const SymTensorField& g_base, const ScalarField& residual,
                                          const WeightSpec& weights,
                                          const LinearCorrectionOptions& opt = {}) {
  const DomainPtr& dom = g_base.domain;
  require_same(dom, residual.domain);
  const auto& D = *dom;
  const int n = D.dim, nc = sym_components(n);
  ScalarGlueLayout L(dom);
  const auto& rows = L.rows();
  const auto& cols = L.cols();
  const auto a = eval_coefficient(weights, dom);

  LinearCorrection out{SymTensorField(dom), ScalarField(dom)};
  Vector r(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) r[k] = residual[rows[k]];
  const double rmax = r.cwiseAbs().maxCoeff();
  if (rmax == 0.0) return out;

  const auto A = probe_linearized_curvature(L, g_base);
  // Cell measures and per-cell tensor pairings.
  auto measure = [&](std::size_t c) {
    Mat3 gi;
    double det;
    if (!spd_inverse(sym_at(g_base, c), n, gi, det))
      fail(ErrorKind::MetricNotPositive, "base metric is not positive-definite", static_cast<double>(c));
    return std::make_pair(std::sqrt(det) * D.cell_volume(), gi);
  };
  Vector mu_rows(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) mu_rows[k] = measure(rows[k]).first;
  // G = blockdiag(a_c (mu_c Q_c)^-1): dg = G A^T M N.
  std::vector<Eigen::Triplet<double>> gt;
  for (std::size_t k = 0; k < cols.size(); ++k) {
    const auto [mu, gi] = measure(cols[k]);
    const Eigen::MatrixXd Gi = detail::packed_pairing(gi, n).inverse() * (a[cols[k]] / mu);
    for (int p = 0; p < nc; ++p)
      for (int q = 0; q < nc; ++q)
        if (Gi(p, q) != 0.0) gt.emplace_back(static_cast<int>(k * nc + p), static_cast<int>(k * nc + q), Gi(p, q));
  }
  Eigen::SparseMatrix<double> G(A.cols(), A.cols());
  G.setFromTriplets(gt.begin(), gt.end());
  const Eigen::SparseMatrix<double> MA = mu_rows.asDiagonal() * A;
  const Eigen::SparseMatrix<double> S = MA * G * Eigen::SparseMatrix<double>(MA.transpose());

  // Rows whose weighted stencil is negligible carry no information; the rest
  // are Jacobi-scaled, which bounds every entry of the scaled S by one.
  const Eigen::Index m = S.rows(), nz = n + 1;
  std::vector<Eigen::Index> active;
  Vector dscale = Vector::Zero(m);
  const double smax = S.diagonal().maxCoeff();
  for (Eigen::Index k = 0; k < m; ++k)
    if (S.coeff(k, k) > 1e-24 * smax) {
      dscale[k] = 1.0 / std::sqrt(S.coeff(k, k));
      active.push_back(k);
    }
  const Eigen::Index ma = static_cast<Eigen::Index>(active.size());
  std::vector<Eigen::Index> slot(m, -1);
  for (Eigen::Index k = 0; k < ma; ++k) slot[active[k]] = k;
  Eigen::MatrixXd Z(m, nz);
  for (Eigen::Index k = 0; k < m; ++k) {
    const Vec3 x = D.cell_center(rows[k]);
    Z(k, 0) = 1.0;
    for (int i = 0; i < n; ++i) Z(k, 1 + i) = x[i];
  }
  std::vector<Eigen::Triplet<double>> bt;
  bt.reserve(S.nonZeros() + ma);
  for (Eigen::Index k = 0; k < S.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(S, k); it; ++it) {
      const Eigen::Index i = slot[it.row()], j = slot[it.col()];
      if (i >= 0 && j >= 0)
        bt.emplace_back(static_cast<int>(i), static_cast<int>(j),
                        it.value() * dscale[it.row()] * dscale[it.col()]);
    }
  Eigen::SparseMatrix<double> Ss(ma, ma);
  Ss.setFromTriplets(bt.begin(), bt.end());
  // Candidate directions in scaled coordinates, where the affine functions
  // are D^-1 Z with D = diag(dscale), refined by subspace inverse iteration
  // on the slightly shifted operator.
  auto orthonormalize = [](Eigen::MatrixXd& X) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(X);
    X = qr.householderQ() * Eigen::MatrixXd::Identity(X.rows(), X.cols());
  };
  Eigen::MatrixXd V(ma, nz);
  for (Eigen::Index k = 0; k < ma; ++k) V.row(k) = Z.row(active[k]) / dscale[active[k]];
  orthonormalize(V);
  {
    Eigen::SparseMatrix<double> St = Ss;
    for (Eigen::Index k = 0; k < ma; ++k) St.coeffRef(k, k) += 1e-10;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(St);
    if (ldlt.info() != Eigen::Success)
      fail(ErrorKind::NoConvergence, "factorization of the linearized problem failed");
    for (int it = 0; it < 12; ++it) {
      Eigen::MatrixXd W = ldlt.solve(V);
      orthonormalize(W);
      const double moved = (W - V * (V.transpose() * W)).norm();
      V = W;
      if (moved < 1e-13) break;
    }
  }
  {
    const Eigen::MatrixXd SV = Ss * V;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ritz(V.transpose() * SV);
    V = V * ritz.eigenvectors();
    Eigen::Index keep = 0;
    for (Eigen::Index j = 0; j < nz; ++j)
      if (opt.deflation == Deflation::NearKernel || ritz.eigenvalues()[j] <= opt.kernel_tol)
        V.col(keep++) = V.col(j);
    V.conservativeResize(ma, keep);
  }
  const Eigen::Index nv = V.cols();
  // The defect is the dmu-orthogonal projection of r onto the excluded
  // functions W = D V. In scaled form the multiplier columns are DMW, the
  // constraint rows V keep the solution off the excluded directions.
  Vector b(ma);
  for (Eigen::Index k = 0; k < ma; ++k) b[k] = dscale[active[k]] * mu_rows[active[k]] * r[active[k]];
  Eigen::MatrixXd U = V;
  for (Eigen::Index k = 0; k < ma; ++k) U.row(k) *= dscale[active[k]] * dscale[active[k]] * mu_rows[active[k]];
  Vector c = Vector::Zero(nv);
  if (nv > 0) {
    c = (V.transpose() * U).ldlt().solve(V.transpose() * b);
    b -= U * c;
  }
  Vector uscale(nv);
  for (Eigen::Index j = 0; j < nv; ++j) {
    uscale[j] = 1.0 / U.col(j).norm();
    U.col(j) *= uscale[j];
  }
  std::vector<Eigen::Triplet<double>> et = bt;
  for (Eigen::Index k = 0; k < ma; ++k)
    for (Eigen::Index j = 0; j < nv; ++j) {
      et.emplace_back(static_cast<int>(k), static_cast<int>(ma + j), U(k, j));
      et.emplace_back(static_cast<int>(ma + j), static_cast<int>(k), V(k, j));
    }
  Eigen::SparseMatrix<double> B(ma + nv, ma + nv);
  B.setFromTriplets(et.begin(), et.end());
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(B);
  if (lu.info() != Eigen::Success)
    fail(ErrorKind::NoConvergence, "factorization of the linearized problem failed");
  Vector rhs = Vector::Zero(ma + nv);
  rhs.head(ma) = b;
  const Vector sol = lu.solve(rhs);
  // Zero when V spans an exact kernel; otherwise what the solve still routed
  // through the excluded directions.
  c += sol.tail(nv).cwiseProduct(uscale);
  const Vector Vc = V * c;
  Vector defect = Vector::Zero(m), N = Vector::Zero(m);
  for (Eigen::Index k = 0; k < ma; ++k) {
    defect[active[k]] = dscale[active[k]] * Vc[k];
    N[active[k]] = dscale[active[k]] * sol[k];
  }
  out.solvability_defect = defect.cwiseAbs().maxCoeff() / rmax;
  r -= defect;
  const Vector dgv = G * (MA.transpose() * N);
  const Vector DRdg = A * dgv;
  out.linear_residual = (DRdg - r).cwiseAbs().maxCoeff() / rmax;
  if (opt.strict && out.solvability_defect > opt.defect_tol)
    fail(ErrorKind::NetSourceMismatch, "residual has a component along the static potentials",
         out.solvability_defect);
  for (std::size_t k = 0; k < cols.size(); ++k)
    for (int p = 0; p < nc; ++p) out.dg.values[cols[k] * nc + p] = dgv[k * nc + p];
  for (std::size_t k = 0; k < rows.size(); ++k) out.N[rows[k]] = N[k];
  return out;
}

// ---------------------------------------------------------------------------
// Picard iteration

struct ScalarGlueProblem {
  SymTensorField g;
  SymTensorField g_hat;
  WeightSpec weights = ExponentialWeight{0.0, 4.0};
  CutoffSpec cutoff{};
  double tol = 1e-8;
  int max_iter = 10;
  /// Largest admissible sup |g_hat - g| on the region.
  double smallness = 0.1;
  LinearCorrectionOptions linear{};
};

struct PicardStep {
  int iteration = 0;
  double residual = 0.0;
  /// residual / previous residual (0 on the first row).
  double contraction = 0.0;
  double solvability_defect = 0.0;
  double linear_residual = 0.0;
  int halvings = 0;
};

struct ScalarGlueResult {
  SymTensorField dg;
  SymTensorField metric;  // g_chi + dg
  ScalarField target;
  ScalarField residual;   // R(metric) - target on the layout rows
  std::vector<PicardStep> trace;
  double final_residual = 0.0;
  /// sup |dg| on region cells next to the boundary, and outside the region.
  double boundary_dg = 0.0;
  double outside_dg = 0.0;
  /// Largest cell-wise excursion of R(metric) outside [min, max] of R(g), R(g_hat).
  double sandwich_excess = 0.0;
};

namespace detail {

inline double rows_sup(const ScalarGlueLayout& L, const ScalarField& f) {
  double s = 0.0;
  for (std::size_t c : L.rows()) s = std::max(s, std::abs(f[c]));
  return s;
}

inline ScalarField rows_residual(const ScalarGlueLayout& L, const SymTensorField& metric,
                                 const ScalarField& target) {
  const Vector R = rows_curvature(L, metric);
  ScalarField out(metric.domain);
  for (std::size_t k = 0; k < L.rows().size(); ++k) out[L.rows()[k]] = R[k] - target[L.rows()[k]];
  return out;
}

inline bool positive_on(const ScalarGlueLayout& L, const SymTensorField& g) {
  Mat3 gi;
  double det;
  for (std::size_t c : L.rows())
    if (!spd_inverse(sym_at(g, c), g.domain->dim, gi, det)) return false;
  return true;
}

}  // namespace detail

inline ScalarGlueResult picard_glue(const ScalarGlueProblem& p) {
  require_same(p.g.domain, p.g_hat.domain);
  const DomainPtr& dom = p.g.domain;
  if (!(p.tol > 0.0)) fail(ErrorKind::ParamOutOfRange, "tolerance must be > 0", p.tol);
  if (p.max_iter < 1) fail(ErrorKind::ParamOutOfRange, "max_iter must be >= 1", p.max_iter);
  validate_weight(p.weights, dom->region, dom->dim);
  require_positive(p.g);
  require_positive(p.g_hat);
  ScalarGlueLayout L(dom);
  double gap = 0.0;
  for (std::size_t c : L.cols())
    for (int q = 0; q < p.g.ncomp(); ++q) {
      const std::size_t k = c * p.g.ncomp() + q;
      gap = std::max(gap, std::abs(p.g_hat.values[k] - p.g.values[k]));
    }
  if (gap > p.smallness)
    fail(ErrorKind::NoConvergence, "metrics differ by more than the smallness threshold", gap);

  const auto chi = eval_cutoff(p.cutoff, dom);
  ScalarGlueResult out;
  // The target is needed on every row, including the layer just outside the
  // region that interpolated_target leaves at zero.
  const Vector Rg = detail::rows_curvature(L, p.g), Rh = detail::rows_curvature(L, p.g_hat);
  out.target = ScalarField(dom);
  for (std::size_t k = 0; k < L.rows().size(); ++k) {
    const std::size_t c = L.rows()[k];
    out.target[c] = chi[c] * Rh[k] + (1.0 - chi[c]) * Rg[k];
  }
  const SymTensorField g_chi = blend_metrics(p.g, p.g_hat, chi);
  out.dg = SymTensorField(dom);
  out.metric = g_chi;
  out.residual = detail::rows_residual(L, out.metric, out.target);
  double res = detail::rows_sup(L, out.residual);
  out.trace.push_back({0, res, 0.0, 0.0, 0.0, 0});

  for (int it = 1; res > p.tol; ++it) {
    if (it > p.max_iter)
      fail(ErrorKind::NoConvergence, "Picard iteration did not reach tolerance", res);
    ScalarField rhs(dom);
    for (std::size_t c : L.rows()) rhs[c] = -out.residual[c];
    const auto corr = linear_correction(out.metric, rhs, p.weights, p.linear);
    // Full step, halved at most four times while the residual grows.
    PicardStep step{it, res, 0.0, corr.solvability_defect, corr.linear_residual, 0};
    double s = 1.0;
    for (;; s *= 0.5) {
      SymTensorField trial = out.metric;
      for (std::size_t k = 0; k < trial.values.size(); ++k) trial.values[k] += s * corr.dg.values[k];
      const bool ok = detail::positive_on(L, trial);
      if (ok) {
        auto r = detail::rows_residual(L, trial, out.target);
        const double nr = detail::rows_sup(L, r);
        if (nr < res || step.halvings == 4) {
          if (!(nr < res)) fail(ErrorKind::NoConvergence, "residual grows along the Picard step", nr);
          out.metric = std::move(trial);
          out.residual = std::move(r);
          for (std::size_t k = 0; k < out.dg.values.size(); ++k) out.dg.values[k] += s * corr.dg.values[k];
          step.contraction = nr / res;
          step.residual = nr;
          res = nr;
          break;
        }
      } else if (step.halvings == 4) {
        fail(ErrorKind::MetricNotPositive, "Picard step leaves the positive metrics", s);
      }
      ++step.halvings;
    }
    out.trace.push_back(step);
  }
  out.final_residual = res;

  const auto& D = *dom;
  const int nc = out.dg.ncomp();
  for (std::size_t c = 0; c < D.cell_count(); ++c) {
    double m = 0.0;
    for (int q = 0; q < nc; ++q) m = std::max(m, std::abs(out.dg.values[c * nc + q]));
    if (!D.interior[c]) {
      out.outside_dg = std::max(out.outside_dg, m);
      continue;
    }
    bool edge = false;
    L.for_neighbors(c, [&](std::size_t q) { edge = edge || !D.interior[q]; });
    if (edge) out.boundary_dg = std::max(out.boundary_dg, m);
  }
  for (std::size_t k = 0; k < L.rows().size(); ++k) {
    const std::size_t c = L.rows()[k];
    const double R = out.target[c] + out.residual[c];
    const double lo = std::min(Rg[k], Rh[k]), hi = std::max(Rg[k], Rh[k]);
    out.sandwich_excess = std::max({out.sandwich_excess, lo - R, R - hi});
  }
  return out;
}

}  // namespace glue
