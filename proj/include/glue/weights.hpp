#pragma once

// Degenerate weight pairs (phi, psi) and transverse cut-off functions.

#include <cmath>
#include <variant>

#include "glue/grid.hpp"

namespace glue {

struct PowerWeight {
  double sigma = 4.0;
};
struct ExponentialWeight {
  double alpha = 0.0;
  double s = 1.0;
};
/// q < 0 means "use the default (n-2)/4".
struct ConeWeight {
  double q = -1.0;
  double sigma = 2.0;
};
struct ExoticWeight {
  double sigma = 2.0;
  double s = 1.0;
  double beta = 1.0;
};

using WeightSpec = std::variant<PowerWeight, ExponentialWeight, ConeWeight, ExoticWeight>;

/// Smooth positive radius, equal to |x| for |x| >= 1. Below 1 it is the
/// quartic in |x|^2 matching value, slope and curvature at |x| = 1.
inline double regularized_radius(double rr) {
  if (rr >= 1.0) return rr;
  const double s = rr * rr;
  return (3.0 + 6.0 * s - s * s) / 8.0;
}

inline double cone_q(const ConeWeight& w, int n) {
  return w.q < 0.0 ? (n - 2) / 4.0 : w.q;
}

/// Exotic exponent mu with beta = sigma + mu + n/2.
inline double exotic_mu(const ExoticWeight& w, int n) {
  return w.beta - w.sigma - 0.5 * n;
}

inline void validate_weight(const WeightSpec& spec, const RegionSpec& region, int n) {
  if (std::holds_alternative<Box>(region))
    fail(ErrorKind::ParamOutOfRange, "weights need a region with a boundary");
  if (const auto* p = std::get_if<PowerWeight>(&spec)) {
    if (!(p->sigma > 0.0)) fail(ErrorKind::ParamOutOfRange, "power weight needs sigma > 0", p->sigma);
  } else if (const auto* e = std::get_if<ExponentialWeight>(&spec)) {
    if (!(e->s > 0.0)) fail(ErrorKind::ParamOutOfRange, "exponential weight needs s > 0", e->s);
  } else if (const auto* c = std::get_if<ConeWeight>(&spec)) {
    if (!std::holds_alternative<ConeShell>(region))
      fail(ErrorKind::ParamOutOfRange, "cone weights need a cone-shell region");
    const double q = cone_q(*c, n);
    if (!(q > 0.0 && q < 0.5 * (n - 2)))
      fail(ErrorKind::ParamOutOfRange, "cone weight needs 0 < q < (n-2)/2", q);
    if (n >= 5 && std::abs(q - 0.5 * (n - 4)) < 1e-12)
      fail(ErrorKind::ParamOutOfRange, "cone weight excludes q = (n-4)/2", q);
    if (!(c->sigma > 0.0)) fail(ErrorKind::ParamOutOfRange, "cone weight needs sigma > 0", c->sigma);
  } else if (const auto* x = std::get_if<ExoticWeight>(&spec)) {
    if (!(x->s > 0.0)) fail(ErrorKind::ParamOutOfRange, "exotic weight needs s > 0", x->s);
    if (x->beta == 0.0) fail(ErrorKind::ParamOutOfRange, "exotic weight needs beta != 0");
  }
}

struct WeightPair {
  double phi;
  double psi;
};

/// Pointwise weights at a point of the open region. Validation is the
/// caller's job (see validate_weight).
inline WeightPair weight_at(const WeightSpec& spec, const RegionSpec& region, int n,
                            const Vec3& x) {
  return std::visit(
      [&](const auto& w) -> WeightPair {
        using T = std::decay_t<decltype(w)>;
        if constexpr (std::is_same_v<T, PowerWeight>) {
          const auto [a, b] = boundary_pair(region, x);
          return {1.0 / (a * b), std::pow(a * b, w.sigma)};
        } else if constexpr (std::is_same_v<T, ExponentialWeight>) {
          const auto [a, b] = boundary_pair(region, x);
          const double ab = a * b;
          return {1.0 / (ab * ab), std::pow(ab, w.alpha) * std::exp(-w.s / ab)};
        } else if constexpr (std::is_same_v<T, ConeWeight>) {
          const auto& cs = std::get<ConeShell>(region);
          const auto [rho, theta] = cone_coords(cs, x);
          const double r = regularized_radius(rho);
          double psi = std::pow(r, 0.5 * n - cone_q(w, n)) *
                       std::pow((theta - cs.theta1) * (cs.theta2 - theta), w.sigma);
          // The truncation sphere counts as boundary: taper over the last 10%.
          const double t0 = 0.9 * cs.rmax;
          if (rho > t0) psi *= std::pow((cs.rmax - rho) / (cs.rmax - t0), w.sigma);
          return {r, psi};
        } else {
          const double r = regularized_radius(norm(x));
          const auto [a, b] = boundary_pair(region, x);
          const double d = std::min(a, b);
          return {d * d / r, std::pow(r, exotic_mu(w, n)) * std::pow(d, w.sigma) *
                                 std::exp(-w.s * r / d)};
        }
      },
      spec);
}

/// psi on interior cells, 0 elsewhere. Exponential-type weights underflow a
/// few cells from the boundary; they are floored at the smallest normal
/// double so psi stays strictly positive on the interior.
inline ScalarField eval_psi(const WeightSpec& spec, const DomainPtr& dom) {
  validate_weight(spec, dom->region, dom->dim);
  ScalarField out(dom);
  constexpr double floor = std::numeric_limits<double>::min();
  for (std::size_t c = 0; c < dom->cell_count(); ++c)
    if (dom->interior[c])
      out[c] = std::max(floor, weight_at(spec, dom->region, dom->dim, dom->cell_center(c)).psi);
  return out;
}

inline ScalarField eval_phi(const WeightSpec& spec, const DomainPtr& dom) {
  validate_weight(spec, dom->region, dom->dim);
  ScalarField out(dom);
  for (std::size_t c = 0; c < dom->cell_count(); ++c)
    if (dom->interior[c]) out[c] = weight_at(spec, dom->region, dom->dim, dom->cell_center(c)).phi;
  return out;
}

/// The product phi^2 psi^2 that sits inside the divergence of the elliptic
/// operator.
inline ScalarField eval_coefficient(const WeightSpec& spec, const DomainPtr& dom) {
  auto phi = eval_phi(spec, dom);
  auto psi = eval_psi(spec, dom);
  for (std::size_t c = 0; c < dom->cell_count(); ++c) {
    const double pp = phi[c] * psi[c];
    phi[c] = pp * pp;
  }
  return phi;
}

// ---------------------------------------------------------------------------
// Cut-off

struct CutoffSpec {
  double t0 = 0.4;
  double t1 = 0.6;
};

inline double smoothstep5(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  return t * t * t * (t * (6.0 * t - 15.0) + 10.0);
}

/// Normalized transverse coordinate: 0 on the inner boundary component,
/// 1 on the outer one. Defined (by extension) on all of space.
inline double transverse_coordinate(const RegionSpec& region, const Vec3& x) {
  if (const auto* a = std::get_if<Annulus>(&region))
    return (norm(x) - a->r1) / (a->r2 - a->r1);
  if (const auto* c = std::get_if<ConeShell>(&region)) {
    const auto cc = cone_coords(*c, x);
    return (cc.theta - c->theta1) / (c->theta2 - c->theta1);
  }
  fail(ErrorKind::ParamOutOfRange, "box regions have no transverse coordinate");
}

inline void validate_cutoff(const CutoffSpec& spec) {
  if (!(spec.t0 > 0.0 && spec.t0 < spec.t1 && spec.t1 < 1.0))
    fail(ErrorKind::BandOutsideRegion, "cut-off band must satisfy 0 < t0 < t1 < 1",
         spec.t0 <= 0.0 ? spec.t0 : spec.t1);
}

/// chi = 1 near the inner component, 0 near the outer one, quintic in between.
inline double cutoff_at(const CutoffSpec& spec, const RegionSpec& region, const Vec3& x) {
  const double t = transverse_coordinate(region, x);
  return 1.0 - smoothstep5((t - spec.t0) / (spec.t1 - spec.t0));
}

/// Evaluated at every cell center of the box, not only interior ones, so the
/// glued fields can be formed everywhere.
inline ScalarField eval_cutoff(const CutoffSpec& spec, const DomainPtr& dom) {
  validate_cutoff(spec);
  ScalarField out(dom);
  for (std::size_t c = 0; c < dom->cell_count(); ++c)
    out[c] = cutoff_at(spec, dom->region, dom->cell_center(c));
  return out;
}

}  // namespace glue
