#pragma once

// Gluing of source-free vector fields: E equals E1 inside the inner boundary
// component of the region, E2 outside the outer one, and is divergence-free
// to solver tolerance everywhere.

#include <cmath>
#include <functional>
#include <string>

#include "glue/elliptic.hpp"
#include "glue/weights.hpp"

namespace glue {

// ---------------------------------------------------------------------------
// Input fields

/// Discrete curl of an edge-sampled vector potential. Every edge value enters
/// four faces with cancelling signs, so the divergence vanishes to round-off.
/// In 2D only A_z matters and E is the rotated gradient of the stream
/// function A_z.
inline VectorField discrete_curl(const DomainPtr& dom,
                                 const std::function<Vec3(const Vec3&)>& A) {
  VectorField E(dom);
  const double h = dom->h;
  for (int d = 0; d < dom->dim; ++d) {
    const int e1 = (d + 1) % 3, e2 = (d + 2) % 3;
    for (std::size_t i = 0; i < E.comp[d].size(); ++i) {
      const Vec3 p = dom->face_center(d, dom->face_coords(d, i));
      Vec3 p1p = p, p1m = p, p2p = p, p2m = p;
      p1p[e1] += 0.5 * h, p1m[e1] -= 0.5 * h;
      p2p[e2] += 0.5 * h, p2m[e2] -= 0.5 * h;
      double v = (A(p1p)[e2] - A(p1m)[e2]) / h;
      if (dom->dim == 3 || e2 != 2) v -= (A(p2p)[e1] - A(p2m)[e1]) / h;
      E.comp[d][i] = v;
    }
  }
  return E;
}

/// Vector potential of a dipole along x1, regularized at the origin with core
/// radius `core`. In 2D: A_z = -x2 / (r^2 + core^2).
inline std::function<Vec3(const Vec3&)> dipole_potential(int dim, double core = 0.5) {
  if (dim == 2)
    return [core](const Vec3& x) {
      return Vec3{0.0, 0.0, -x[1] / (x[0] * x[0] + x[1] * x[1] + core * core)};
    };
  // m x x / (r^2 + core^2)^(3/2) with m = e1.
  return [core](const Vec3& x) {
    const double s = std::pow(dot(x, x) + core * core, 1.5);
    return Vec3{0.0, -x[2] / s, x[1] / s};
  };
}

/// Gaussian stream-function bump centered at c with width w (2D: A_z; 3D:
/// A = bump * e3).
inline std::function<Vec3(const Vec3&)> bump_potential(const Vec3& c, double w) {
  return [c, w](const Vec3& x) {
    const Vec3 y = x - c;
    return Vec3{0.0, 0.0, std::exp(-dot(y, y) / (w * w))};
  };
}

/// Compactly supported stream-function bump (1 - |x-c|^2/w^2)^4, C^3.
inline std::function<Vec3(const Vec3&)> compact_bump_potential(const Vec3& c, double w) {
  return [c, w](const Vec3& x) {
    const Vec3 y = x - c;
    const double t = 1.0 - dot(y, y) / (w * w);
    return Vec3{0.0, 0.0, t > 0.0 ? t * t * t * t : 0.0};
  };
}

/// Point charge at the origin, x / |x|^n: flux 2 pi (2D) or 4 pi (3D).
inline VectorField monopole_field(const DomainPtr& dom) {
  const int n = dom->dim;
  return sample_faces(dom, [n](const Vec3& x) {
    const double r = norm(x);
    return (1.0 / std::pow(r, n)) * x;
  });
}

// ---------------------------------------------------------------------------
// Gluing

/// The cut-off sampled at face centers, used to blend face-staggered fields.
inline VectorField sample_cutoff_faces(const CutoffSpec& spec, const DomainPtr& dom) {
  validate_cutoff(spec);
  VectorField chi(dom);
  for (int d = 0; d < dom->dim; ++d)
    for (std::size_t i = 0; i < chi.comp[d].size(); ++i)
      chi.comp[d][i] = cutoff_at(spec, dom->region, dom->face_center(d, dom->face_coords(d, i)));
  return chi;
}

inline VectorField blend(const VectorField& E1, const VectorField& E2, const VectorField& chi) {
  require_same(E1.domain, E2.domain);
  require_same(E1.domain, chi.domain);
  VectorField E(E1.domain);
  for (int d = 0; d < E1.domain->dim; ++d)
    for (std::size_t i = 0; i < E.comp[d].size(); ++i) {
      const double c = chi.comp[d][i];
      const double a = E1.comp[d][i], b = E2.comp[d][i];
      E.comp[d][i] = c == 1.0 ? a : c == 0.0 ? b : b + c * (a - b);
    }
  return E;
}

/// rho_chi = div(chi E1 + (1 - chi) E2), computed exactly that way.
inline ScalarField assemble_rho_chi(const VectorField& E1, const VectorField& E2,
                                    const VectorField& chi) {
  return discrete_divergence(blend(E1, E2, chi));
}

/// Flux of E1 out of the inner boundary component minus the flux of E2 out
/// of the outer one. For an annulus these are midpoint quadratures over the
/// spheres r = R1 and r = R2; otherwise the staircase boundary of the
/// interior cells is split by which side of the region each exterior cell
/// lies on.
inline double compatibility_check(const VectorField& E1, const VectorField& E2) {
  require_same(E1.domain, E2.domain);
  const auto& dom = *E1.domain;
  if (const auto* a = std::get_if<Annulus>(&dom.region))
    return flux_integral(E1, Sphere{{0, 0, 0}, a->r1}) - flux_integral(E2, Sphere{{0, 0, 0}, a->r2});
  const double area = std::pow(dom.h, dom.dim - 1);
  double mismatch = 0.0;
  for (int d = 0; d < dom.dim; ++d) {
    for (std::size_t i = 0; i < dom.face_count(d); ++i) {
      const auto f = dom.face_coords(d, i);
      const auto [lo, hi] = dom.face_cells(d, f);
      const bool in_lo = dom.is_interior(lo), in_hi = dom.is_interior(hi);
      if (in_lo == in_hi) continue;
      const Index3 out = in_lo ? hi : lo;
      // Flux leaving the region through this face, outward normal sign.
      const double sign = in_lo ? 1.0 : -1.0;
      Vec3 xo = dom.cell_center(out[0], out[1], out[2]);
      const bool inner = transverse_coordinate(dom.region, xo) < 0.5;
      // The region's outflow through its inner component is minus the
      // outflow of E1 from the inner side.
      if (inner)
        mismatch -= sign * E1.comp[d][i] * area;
      else
        mismatch -= sign * E2.comp[d][i] * area;
    }
  }
  return mismatch;
}

struct GlueProblem {
  VectorField E1;
  VectorField E2;
  WeightSpec weights = ExponentialWeight{};
  CutoffSpec cutoff{};
  SolveOptions solver{};
};

struct GlueResult {
  VectorField E;
  ScalarField u;
  ScalarField rho_chi;
  SolveReport report;
  double max_div = 0.0;
  /// sup |E - E_i| over faces outside the open region (chi in {0, 1}).
  double interface_mismatch = 0.0;
  /// Flux mismatch between the two boundary components.
  double compatibility = 0.0;
};

inline GlueResult glue_fields(const GlueProblem& p) {
  require_same(p.E1.domain, p.E2.domain);
  const DomainPtr& dom = p.E1.domain;
  const auto chi = sample_cutoff_faces(p.cutoff, dom);
  GlueResult r;
  r.compatibility = compatibility_check(p.E1, p.E2);
  const VectorField Echi = blend(p.E1, p.E2, chi);
  r.rho_chi = discrete_divergence(Echi);
  ScalarField rho = r.rho_chi;
  for (std::size_t c = 0; c < dom->cell_count(); ++c)
    if (!dom->interior[c]) rho[c] = 0.0;
  // Equal inputs need no correction; solving would only amplify the
  // round-off in their discrete divergence.
  if (p.E1.comp == p.E2.comp) std::fill(rho.values.begin(), rho.values.end(), 0.0);
  auto sol = solve_weighted_poisson(eval_phi(p.weights, dom), eval_psi(p.weights, dom), rho,
                                    p.solver);
  r.u = std::move(sol.u);
  r.report = std::move(sol.report);
  r.E = Echi;
  for (int d = 0; d < dom->dim; ++d)
    for (std::size_t i = 0; i < r.E.comp[d].size(); ++i) r.E.comp[d][i] -= sol.flux.comp[d][i];
  const auto div = discrete_divergence(r.E);
  for (double v : div.values) r.max_div = std::max(r.max_div, std::abs(v));
  for (int d = 0; d < dom->dim; ++d) {
    for (std::size_t i = 0; i < r.E.comp[d].size(); ++i) {
      if (dom->face_interior(d, dom->face_coords(d, i))) continue;
      const double c = chi.comp[d][i];
      if (c == 1.0)
        r.interface_mismatch = std::max(r.interface_mismatch, std::abs(r.E.comp[d][i] - p.E1.comp[d][i]));
      else if (c == 0.0)
        r.interface_mismatch = std::max(r.interface_mismatch, std::abs(r.E.comp[d][i] - p.E2.comp[d][i]));
    }
  }
  return r;
}

}  // namespace glue
