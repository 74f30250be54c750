#pragma once

// div(phi^2 psi^2 grad u) = f on the interior cells, in the quotient by
// locally constant functions, by Jacobi-preconditioned CG.

#include <cmath>
#include <vector>

#include "glue/grid.hpp"
#include "glue/linalg.hpp"

namespace glue {

/// Face coefficients: the average of the two adjacent cell values on interior
/// faces, 0 elsewhere (zero flux through the region boundary).
inline VectorField face_coefficients(const ScalarField& a) {
  const auto& dom = *a.domain;
  VectorField af(a.domain);
  for (int d = 0; d < dom.dim; ++d) {
    for (std::size_t i = 0; i < af.comp[d].size(); ++i) {
      const auto f = dom.face_coords(d, i);
      if (!dom.face_interior(d, f)) continue;
      const auto [lo, hi] = dom.face_cells(d, f);
      af.comp[d][i] = 0.5 * (a.at(lo) + a.at(hi));
    }
  }
  return af;
}

/// a grad u on faces.
inline VectorField weighted_flux(const VectorField& af, const ScalarField& u) {
  require_same(af.domain, u.domain);
  VectorField F = discrete_gradient(u);
  for (int d = 0; d < u.domain->dim; ++d)
    for (std::size_t i = 0; i < F.comp[d].size(); ++i) F.comp[d][i] *= af.comp[d][i];
  return F;
}

/// div(a grad u).
inline ScalarField apply_weighted_operator(const VectorField& af, const ScalarField& u) {
  return discrete_divergence(weighted_flux(af, u));
}

/// -div(a grad .) restricted to the interior cells, as a symmetric positive
/// semidefinite operator on compact vectors. Its kernel is spanned by the
/// indicators of the connected components of the face graph with a_f > 0.
class WeightedStiffness {
 public:
  WeightedStiffness(const VectorField& af) : domain_(af.domain) {
    const auto& dom = *domain_;
    unknown_of_.assign(dom.cell_count(), -1);
    for (std::size_t c = 0; c < dom.cell_count(); ++c) {
      if (!dom.interior[c]) continue;
      unknown_of_[c] = static_cast<long>(cells_.size());
      cells_.push_back(c);
    }
    const std::size_t n = cells_.size();
    stride_ = 2 * dom.dim;
    nb_.assign(n * stride_, 0);
    w_.assign(n * stride_, 0.0);
    diag_ = Vector::Zero(static_cast<Eigen::Index>(n));
    const double inv_h2 = 1.0 / (dom.h * dom.h);
    for (std::size_t k = 0; k < n; ++k) {
      const auto ci = dom.cell_coords(cells_[k]);
      int slot = 0;
      for (int d = 0; d < dom.dim; ++d) {
        for (int s = 0; s < 2; ++s) {
          Index3 f = ci;
          Index3 nb = ci;
          if (s == 1) f[d] += 1;
          nb[d] += s == 1 ? 1 : -1;
          const std::size_t fi = dom.face_index(d, f[0], f[1], f[2]);
          const double w = af.comp[d][fi] * inv_h2;
          const std::size_t at = k * stride_ + slot++;
          nb_[at] = k;
          if (w > 0.0 && dom.is_interior(nb)) {
            nb_[at] = static_cast<std::size_t>(unknown_of_[dom.cell_index(nb)]);
            w_[at] = w;
            diag_[static_cast<Eigen::Index>(k)] += w;
          }
        }
      }
    }
    label_components();
  }

  std::size_t size() const { return cells_.size(); }
  const Vector& diagonal() const { return diag_; }
  const std::vector<std::size_t>& cells() const { return cells_; }
  const std::vector<int>& component() const { return component_; }
  int component_count() const { return static_cast<int>(component_size_.size()); }

  void apply(const Vector& x, Vector& y) const {
    y.resize(x.size());
    parallel_for(cells_.size(), [&](std::size_t k) {
      double s = 0.0;
      const double xk = x[static_cast<Eigen::Index>(k)];
      for (std::size_t j = 0; j < stride_; ++j) {
        const std::size_t at = k * stride_ + j;
        s += w_[at] * (xk - x[static_cast<Eigen::Index>(nb_[at])]);
      }
      y[static_cast<Eigen::Index>(k)] = s;
    });
  }

  LinearOp op() const {
    return [this](const Vector& x, Vector& y) { apply(x, y); };
  }

  Vector gather(const ScalarField& u) const {
    Vector v(static_cast<Eigen::Index>(cells_.size()));
    for (std::size_t k = 0; k < cells_.size(); ++k) v[static_cast<Eigen::Index>(k)] = u[cells_[k]];
    return v;
  }
  ScalarField scatter(const Vector& v) const {
    ScalarField u(domain_);
    for (std::size_t k = 0; k < cells_.size(); ++k) u[cells_[k]] = v[static_cast<Eigen::Index>(k)];
    return u;
  }

  /// Per-component sums of v.
  std::vector<double> component_sums(const Vector& v) const {
    std::vector<double> s(component_size_.size(), 0.0);
    for (std::size_t k = 0; k < cells_.size(); ++k) s[component_[k]] += v[static_cast<Eigen::Index>(k)];
    return s;
  }

  /// Removes the per-component mean (Euclidean projection onto the range).
  void project_range(Vector& v) const {
    auto s = component_sums(v);
    for (std::size_t c = 0; c < s.size(); ++c) s[c] /= component_size_[c];
    for (std::size_t k = 0; k < cells_.size(); ++k) v[static_cast<Eigen::Index>(k)] -= s[component_[k]];
  }

  /// Shifts each component so that sum(w * v) over it vanishes (falls back to
  /// the plain mean where w sums to zero).
  void shift_weighted_mean(Vector& v, const Vector& w) const {
    std::vector<double> num(component_size_.size(), 0.0), den(component_size_.size(), 0.0);
    for (std::size_t k = 0; k < cells_.size(); ++k) {
      const auto i = static_cast<Eigen::Index>(k);
      num[component_[k]] += w[i] * v[i];
      den[component_[k]] += w[i];
    }
    auto plain = component_sums(v);
    for (std::size_t c = 0; c < num.size(); ++c)
      num[c] = den[c] > 0.0 ? num[c] / den[c] : plain[c] / component_size_[c];
    for (std::size_t k = 0; k < cells_.size(); ++k) v[static_cast<Eigen::Index>(k)] -= num[component_[k]];
  }

 private:
  void label_components() {
    const std::size_t n = cells_.size();
    component_.assign(n, -1);
    std::vector<std::size_t> stack;
    for (std::size_t seed = 0; seed < n; ++seed) {
      if (component_[seed] >= 0) continue;
      const int id = static_cast<int>(component_size_.size());
      component_size_.push_back(0.0);
      component_[seed] = id;
      stack.push_back(seed);
      while (!stack.empty()) {
        const std::size_t k = stack.back();
        stack.pop_back();
        component_size_[id] += 1.0;
        for (std::size_t j = 0; j < stride_; ++j) {
          const std::size_t at = k * stride_ + j;
          if (w_[at] > 0.0 && component_[nb_[at]] < 0) {
            component_[nb_[at]] = id;
            stack.push_back(nb_[at]);
          }
        }
      }
    }
  }

  DomainPtr domain_;
  std::vector<std::size_t> cells_;
  std::vector<long> unknown_of_;
  std::size_t stride_ = 4;
  std::vector<std::size_t> nb_;
  std::vector<double> w_;
  Vector diag_;
  std::vector<int> component_;
  std::vector<double> component_size_;
};

struct SolveOptions {
  double tol = 1e-10;
  int max_iter = 0;  // 0: 50 N^(1/dim)
  bool strict = true;
  bool trace = false;
};

struct SolveReport {
  int iterations = 0;
  double final_residual = 0.0;
  /// Largest |integral of f| over a connected component of the operator.
  double projection_defect = 0.0;
  /// sup |phi^2 psi^2 grad u| over interior cells within 2h of the boundary.
  double boundary_decay = 0.0;
  int components = 0;
  std::vector<double> energy;
  std::vector<double> residual_trace;
};

struct PoissonSolution {
  ScalarField u;
  VectorField flux;  // phi^2 psi^2 grad u on faces
  SolveReport report;
};

inline int default_iteration_cap(std::size_t unknowns, int dim) {
  return static_cast<int>(50.0 * std::ceil(std::pow(static_cast<double>(unknowns), 1.0 / dim)));
}

/// sup over cells within 2h of the boundary of the cell-averaged flux norm.
inline double boundary_flux_sup(const VectorField& F) {
  const auto& dom = *F.domain;
  double sup = 0.0;
  for (std::size_t c = 0; c < dom.cell_count(); ++c) {
    if (!dom.interior[c] || dom.boundary_distance[c] > 2.0 * dom.h) continue;
    const auto ci = dom.cell_coords(c);
    double s2 = 0.0;
    for (int d = 0; d < dom.dim; ++d) {
      Index3 hi = ci;
      hi[d] += 1;
      const double v = 0.5 * (F.comp[d][dom.face_index(d, ci[0], ci[1], ci[2])] +
                              F.comp[d][dom.face_index(d, hi[0], hi[1], hi[2])]);
      s2 += v * v;
    }
    sup = std::max(sup, std::sqrt(s2));
  }
  return sup;
}

/// Solves div(phi^2 psi^2 grad u) = f. In strict mode a source with a net
/// integral over some connected component (beyond tol relative to
/// max(1, |f|_L1)) is rejected with NetSourceMismatch; otherwise the equation
/// is solved up to that projection and the defect is reported.
inline PoissonSolution solve_weighted_poisson(const ScalarField& phi, const ScalarField& psi,
                                              const ScalarField& f,
                                              const SolveOptions& opt = {}) {
  require_same(phi.domain, psi.domain);
  require_same(phi.domain, f.domain);
  const auto& dom = *f.domain;
  ScalarField a(f.domain);
  for (std::size_t c = 0; c < dom.cell_count(); ++c) {
    if (!dom.interior[c]) continue;
    if (!(phi[c] > 0.0 && psi[c] > 0.0))
      fail(ErrorKind::ParamOutOfRange, "weights must be positive on interior cells");
    const double pp = phi[c] * psi[c];
    a[c] = pp * pp;
  }
  const VectorField af = face_coefficients(a);
  const WeightedStiffness K(af);

  PoissonSolution out;
  SolveReport& rep = out.report;
  rep.components = K.component_count();
  const Vector fv = K.gather(f);
  const double vol = dom.cell_volume();
  double l1 = 0.0;
  for (Eigen::Index i = 0; i < fv.size(); ++i) l1 += std::abs(fv[i]);
  l1 *= vol;
  for (double s : K.component_sums(fv)) rep.projection_defect = std::max(rep.projection_defect, std::abs(s) * vol);
  if (opt.strict && rep.projection_defect > opt.tol * std::max(1.0, l1))
    fail(ErrorKind::NetSourceMismatch, "source has a nonzero integral against constants",
         rep.projection_defect);

  // div(a grad u) = f  <=>  K u = -f.
  Vector x = Vector::Zero(fv.size());
  CgOptions cg;
  cg.tol = opt.tol;
  cg.max_iter = opt.max_iter > 0 ? opt.max_iter : default_iteration_cap(K.size(), dom.dim);
  cg.trace = opt.trace;
  const auto res = pcg(K.op(), K.diagonal(), -fv, x, cg,
                       [&K](Vector& v) { K.project_range(v); });
  rep.iterations = res.iterations;
  rep.final_residual = res.relative_residual;
  rep.energy = res.energy;
  rep.residual_trace = res.residuals;
  if (!res.converged)
    fail(ErrorKind::NoConvergence, "weighted Poisson solve hit the iteration cap",
         res.relative_residual);

  Vector psi2 = K.gather(psi);
  psi2 = psi2.cwiseProduct(psi2);
  K.shift_weighted_mean(x, psi2);
  out.u = K.scatter(x);
  out.flux = weighted_flux(af, out.u);
  rep.boundary_decay = boundary_flux_sup(out.flux);
  return out;
}

}  // namespace glue
