#pragma once

// Truncated rectangular lattices with analytic region masks, and the
// staggered calculus on them: scalars live at cell centers, vector fields on
// faces (component d on faces normal to axis d), so that the discrete
// divergence and gradient are exact negative adjoints.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "glue/error.hpp"

namespace glue {

using Vec3 = std::array<double, 3>;
using Index3 = std::array<int, 3>;

inline double dot(const Vec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 operator-(const Vec3& a, const Vec3& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
inline Vec3 operator+(const Vec3& a, const Vec3& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}
inline Vec3 operator*(double s, const Vec3& a) {
  return {s * a[0], s * a[1], s * a[2]};
}

// ---------------------------------------------------------------------------
// Regions

struct Annulus {
  double r1 = 1.0;
  double r2 = 3.0;
};

/// Difference of two coaxial cones with common apex, truncated at distance
/// `rmax` from the apex. In 2D the "cones" are wedge pairs.
struct ConeShell {
  double theta1 = 0.3;
  double theta2 = 0.6;
  Vec3 axis{0.0, 0.0, 1.0};
  Vec3 apex{0.0, 0.0, 0.0};
  double rmax = 4.0;
};

/// The whole box.
struct Box {};

using RegionSpec = std::variant<Annulus, ConeShell, Box>;

inline void validate_region(const RegionSpec& spec) {
  if (const auto* a = std::get_if<Annulus>(&spec)) {
    if (!(a->r1 > 0.0 && a->r1 < a->r2))
      fail(ErrorKind::ParamOutOfRange, "annulus requires 0 < R1 < R2", a->r1);
  } else if (const auto* c = std::get_if<ConeShell>(&spec)) {
    if (!(c->theta1 > 0.0 && c->theta1 < c->theta2 &&
          c->theta2 < std::numbers::pi / 2))
      fail(ErrorKind::ParamOutOfRange,
           "cone shell requires 0 < theta1 < theta2 < pi/2", c->theta1);
    if (!(c->rmax > 0.0))
      fail(ErrorKind::ParamOutOfRange, "cone shell requires Rmax > 0", c->rmax);
    if (!(norm(c->axis) > 0.0))
      fail(ErrorKind::ParamOutOfRange, "cone axis must be nonzero");
  }
}

/// Polar coordinates of a point relative to a cone shell: distance from the
/// apex and angle from the axis.
struct ConeCoords {
  double rho;
  double theta;
};

inline ConeCoords cone_coords(const ConeShell& c, const Vec3& x) {
  const Vec3 v = x - c.apex;
  const double rho = norm(v);
  if (rho == 0.0) return {0.0, 0.0};
  const double ca = std::clamp(dot(v, c.axis) / (rho * norm(c.axis)), -1.0, 1.0);
  return {rho, std::acos(ca)};
}

inline bool region_contains(const RegionSpec& spec, const Vec3& x) {
  return std::visit(
      [&](const auto& r) -> bool {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, Annulus>) {
          const double rr = norm(x);
          return rr > r.r1 && rr < r.r2;
        } else if constexpr (std::is_same_v<T, ConeShell>) {
          const auto [rho, theta] = cone_coords(r, x);
          return rho > 0.0 && rho < r.rmax && theta > r.theta1 &&
                 theta < r.theta2;
        } else {
          return true;
        }
      },
      spec);
}

/// Distance from a cone-shell point to the cone of aperture `theta_k`.
inline double distance_to_cone(double rho, double theta, double theta_k) {
  const double dt = std::abs(theta - theta_k);
  return dt < std::numbers::pi / 2 ? rho * std::sin(dt) : rho;
}

/// Defining functions of the two boundary components: distance to the inner
/// component and to the outer one (the outer one includes the truncation
/// sphere of a cone shell). Only meaningful for points inside the region.
struct BoundaryPair {
  double inner;
  double outer;
};

inline BoundaryPair boundary_pair(const RegionSpec& spec, const Vec3& x) {
  if (const auto* a = std::get_if<Annulus>(&spec)) {
    const double r = norm(x);
    return {r - a->r1, a->r2 - r};
  }
  if (const auto* c = std::get_if<ConeShell>(&spec)) {
    const auto [rho, theta] = cone_coords(*c, x);
    return {distance_to_cone(rho, theta, c->theta1),
            std::min(distance_to_cone(rho, theta, c->theta2), c->rmax - rho)};
  }
  fail(ErrorKind::ParamOutOfRange,
       "box regions have no inner/outer boundary components");
}

// ---------------------------------------------------------------------------
// Domain

struct Extents {
  Vec3 lo{0.0, 0.0, 0.0};
  Vec3 hi{0.0, 0.0, 0.0};
};

class GridDomain {
 public:
  int dim = 2;
  double h = 1.0;
  Vec3 lo{};
  Index3 n{1, 1, 1};
  RegionSpec region = Box{};
  std::vector<std::uint8_t> interior;
  /// Exact geometric distance of each interior cell center to the region
  /// boundary (and to the box faces for Box regions); 0 outside.
  std::vector<double> boundary_distance;
  /// Grid distance field: max(0, exact distance - h), so it vanishes on every
  /// cell within one spacing of the boundary and is 1-Lipschitz.
  std::vector<double> dist;
  std::size_t interior_count = 0;

  std::size_t cell_count() const {
    return static_cast<std::size_t>(n[0]) * n[1] * n[2];
  }
  std::size_t cell_index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(n[0]) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(n[1]) * k);
  }
  std::size_t cell_index(const Index3& c) const {
    return cell_index(c[0], c[1], c[2]);
  }
  Index3 cell_coords(std::size_t idx) const {
    const int i = static_cast<int>(idx % n[0]);
    const std::size_t rest = idx / n[0];
    return {i, static_cast<int>(rest % n[1]), static_cast<int>(rest / n[1])};
  }
  Vec3 cell_center(int i, int j, int k) const {
    Vec3 x{lo[0] + (i + 0.5) * h, lo[1] + (j + 0.5) * h, 0.0};
    if (dim == 3) x[2] = lo[2] + (k + 0.5) * h;
    return x;
  }
  Vec3 cell_center(std::size_t idx) const {
    const auto c = cell_coords(idx);
    return cell_center(c[0], c[1], c[2]);
  }
  Vec3 hi() const {
    Vec3 x{lo[0] + n[0] * h, lo[1] + n[1] * h, 0.0};
    if (dim == 3) x[2] = lo[2] + n[2] * h;
    return x;
  }
  bool in_box(const Index3& c) const {
    for (int d = 0; d < 3; ++d)
      if (c[d] < 0 || c[d] >= n[d]) return false;
    return true;
  }
  bool is_interior(const Index3& c) const {
    return in_box(c) && interior[cell_index(c)] != 0;
  }
  /// Distance (in cells) from the box edge, used for stencil clearance.
  int clearance(const Index3& c) const {
    int m = n[0];
    for (int d = 0; d < dim; ++d) m = std::min({m, c[d], n[d] - 1 - c[d]});
    return m;
  }
  double cell_volume() const { return std::pow(h, dim); }

  // Faces normal to axis d: index range n with n[d] + 1 along d.
  Index3 face_shape(int d) const {
    Index3 s = n;
    s[d] += 1;
    return s;
  }
  std::size_t face_count(int d) const {
    if (d >= dim) return 0;
    const auto s = face_shape(d);
    return static_cast<std::size_t>(s[0]) * s[1] * s[2];
  }
  std::size_t face_index(int d, int i, int j, int k) const {
    const auto s = face_shape(d);
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(s[0]) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(s[1]) * k);
  }
  Index3 face_coords(int d, std::size_t idx) const {
    const auto s = face_shape(d);
    const int i = static_cast<int>(idx % s[0]);
    const std::size_t rest = idx / s[0];
    return {i, static_cast<int>(rest % s[1]), static_cast<int>(rest / s[1])};
  }
  Vec3 face_center(int d, const Index3& f) const {
    Vec3 x = cell_center(f[0], f[1], f[2]);
    x[d] -= 0.5 * h;
    return x;
  }
  /// Cells on the low and high side of a face; either may be outside the box.
  std::pair<Index3, Index3> face_cells(int d, const Index3& f) const {
    Index3 a = f;
    a[d] -= 1;
    return {a, f};
  }
  /// A face is interior when both adjacent cells are interior cells.
  bool face_interior(int d, const Index3& f) const {
    const auto [a, b] = face_cells(d, f);
    return is_interior(a) && is_interior(b);
  }
};

using DomainPtr = std::shared_ptr<const GridDomain>;

/// Exact distance of an interior point to the region boundary.
inline double region_boundary_distance(const RegionSpec& spec, const Vec3& x,
                                       const GridDomain& box) {
  if (std::holds_alternative<Box>(spec)) {
    const Vec3 hi = box.hi();
    double m = std::numeric_limits<double>::infinity();
    for (int d = 0; d < box.dim; ++d)
      m = std::min({m, x[d] - box.lo[d], hi[d] - x[d]});
    return m;
  }
  const auto p = boundary_pair(spec, x);
  return std::min(p.inner, p.outer);
}

/// Builds the lattice covering `box` at spacing `h`, masks it by `spec` and
/// fills both distance fields.
inline DomainPtr build_domain(const RegionSpec& spec, double h,
                              const Extents& box, int dim) {
  if (dim != 2 && dim != 3)
    fail(ErrorKind::ParamOutOfRange, "dimension must be 2 or 3", dim);
  if (!(h > 0.0)) fail(ErrorKind::ParamOutOfRange, "spacing must be > 0", h);
  validate_region(spec);
  auto dom = std::make_shared<GridDomain>();
  dom->dim = dim;
  dom->h = h;
  dom->region = spec;
  dom->lo = box.lo;
  for (int d = 0; d < dim; ++d) {
    const double len = box.hi[d] - box.lo[d];
    if (!(len > 0.0))
      fail(ErrorKind::ParamOutOfRange, "box extents must be nonempty", len);
    dom->n[d] = std::max(1, static_cast<int>(std::ceil(len / h - 1e-9)));
  }
  if (dim == 2) {
    dom->n[2] = 1;
    dom->lo[2] = 0.0;
  }
  const std::size_t count = dom->cell_count();
  dom->interior.assign(count, 0);
  dom->dist.assign(count, 0.0);
  dom->boundary_distance.assign(count, 0.0);
  for (std::size_t c = 0; c < count; ++c) {
    const Vec3 x = dom->cell_center(c);
    if (!region_contains(spec, x)) continue;
    dom->interior[c] = 1;
    ++dom->interior_count;
    const double d = region_boundary_distance(spec, x, *dom);
    dom->boundary_distance[c] = d;
    dom->dist[c] = std::max(0.0, d - h);
  }
  if (dom->interior_count == 0)
    fail(ErrorKind::EmptyRegion, "no interior cell survives masking");
  return dom;
}

/// Smallest box (with `margin` on every side) containing the region.
inline Extents bounding_box(const RegionSpec& spec, int dim, double margin) {
  Extents e;
  if (const auto* a = std::get_if<Annulus>(&spec)) {
    for (int d = 0; d < dim; ++d) {
      e.lo[d] = -a->r2 - margin;
      e.hi[d] = a->r2 + margin;
    }
  } else if (const auto* c = std::get_if<ConeShell>(&spec)) {
    // Cover the full ball of radius rmax around the apex, then clip the
    // half-space behind the apex along a coordinate axis when aligned.
    for (int d = 0; d < dim; ++d) {
      e.lo[d] = c->apex[d] - c->rmax - margin;
      e.hi[d] = c->apex[d] + c->rmax + margin;
    }
    const double len = norm(c->axis);
    const double half = c->rmax * std::sin(c->theta2);
    for (int d = 0; d < dim; ++d) {
      const double a = c->axis[d] / len;
      if (std::abs(std::abs(a) - 1.0) < 1e-12) {
        if (a > 0) {
          e.lo[d] = c->apex[d] - margin;
        } else {
          e.hi[d] = c->apex[d] + margin;
        }
        for (int o = 0; o < dim; ++o) {
          if (o == d) continue;
          e.lo[o] = c->apex[o] - half - margin;
          e.hi[o] = c->apex[o] + half + margin;
        }
      }
    }
  } else {
    fail(ErrorKind::ParamOutOfRange, "a box region has no intrinsic bounds");
  }
  return e;
}

inline bool same_shape(const GridDomain& a, const GridDomain& b) {
  return a.dim == b.dim && a.n == b.n && a.h == b.h && a.lo == b.lo &&
         a.interior == b.interior;
}

inline void require_same(const DomainPtr& a, const DomainPtr& b) {
  if (!a || !b) fail(ErrorKind::DomainMismatch, "field without a domain");
  if (a != b && !same_shape(*a, *b))
    fail(ErrorKind::DomainMismatch, "fields live on different domains");
}

// ---------------------------------------------------------------------------
// Threading

/// Worker cap from GLUE_THREADS (default 1). Loops run through parallel_for
/// write disjoint outputs, so results never depend on the thread count.
inline unsigned worker_count() {
  if (const char* env = std::getenv("GLUE_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return 1;
}

template <class Fn>
void parallel_for(std::size_t count, Fn&& fn) {
  const unsigned workers =
      std::min<std::size_t>(worker_count(), std::max<std::size_t>(count / 4096, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  const std::size_t chunk = (count + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    const std::size_t b = w * chunk;
    const std::size_t e = std::min(count, b + chunk);
    if (b >= e) break;
    pool.emplace_back([b, e, &fn] {
      for (std::size_t i = b; i < e; ++i) fn(i);
    });
  }
}

// ---------------------------------------------------------------------------
// Fields

struct ScalarField {
  DomainPtr domain;
  std::vector<double> values;

  ScalarField() = default;
  explicit ScalarField(DomainPtr d, double fill = 0.0)
      : domain(std::move(d)), values(domain->cell_count(), fill) {}

  double& operator[](std::size_t c) { return values[c]; }
  double operator[](std::size_t c) const { return values[c]; }
  double& at(const Index3& c) { return values[domain->cell_index(c)]; }
  double at(const Index3& c) const { return values[domain->cell_index(c)]; }
};

/// Face-staggered vector field.
struct VectorField {
  DomainPtr domain;
  std::array<std::vector<double>, 3> comp;

  VectorField() = default;
  explicit VectorField(DomainPtr d) : domain(std::move(d)) {
    for (int a = 0; a < 3; ++a) comp[a].assign(domain->face_count(a), 0.0);
  }
};

/// Cell-centered vector (or covector) field, `dim` components per cell.
struct CellVectorField {
  DomainPtr domain;
  std::vector<double> values;

  CellVectorField() = default;
  explicit CellVectorField(DomainPtr d)
      : domain(std::move(d)), values(domain->cell_count() * domain->dim, 0.0) {}

  double& operator()(std::size_t c, int a) { return values[c * domain->dim + a]; }
  double operator()(std::size_t c, int a) const {
    return values[c * domain->dim + a];
  }
};

/// Packed position of component (a, b) of a symmetric tensor in `dim`
/// dimensions; only the upper triangle is stored.
inline int sym_index(int a, int b, int dim) {
  if (a > b) std::swap(a, b);
  return dim == 2 ? (a == 0 ? b : 2) : (a == 0 ? b : (a == 1 ? 2 + b : 5));
}
inline int sym_components(int dim) { return dim * (dim + 1) / 2; }

struct SymTensorField {
  DomainPtr domain;
  std::vector<double> values;

  SymTensorField() = default;
  explicit SymTensorField(DomainPtr d)
      : domain(std::move(d)),
        values(domain->cell_count() * sym_components(domain->dim), 0.0) {}

  int ncomp() const { return sym_components(domain->dim); }
  double& operator()(std::size_t c, int a, int b) {
    return values[c * ncomp() + sym_index(a, b, domain->dim)];
  }
  double operator()(std::size_t c, int a, int b) const {
    return values[c * ncomp() + sym_index(a, b, domain->dim)];
  }
};

// Sampling analytic functions ------------------------------------------------

inline ScalarField sample_cells(const DomainPtr& dom,
                                const std::function<double(const Vec3&)>& f) {
  ScalarField s(dom);
  for (std::size_t c = 0; c < dom->cell_count(); ++c) s[c] = f(dom->cell_center(c));
  return s;
}

/// Samples the normal component of an analytic vector field at face centers.
inline VectorField sample_faces(const DomainPtr& dom,
                                const std::function<Vec3(const Vec3&)>& f) {
  VectorField v(dom);
  for (int d = 0; d < dom->dim; ++d) {
    for (std::size_t i = 0; i < dom->face_count(d); ++i) {
      const Vec3 x = dom->face_center(d, dom->face_coords(d, i));
      v.comp[d][i] = f(x)[d];
    }
  }
  return v;
}

// ---------------------------------------------------------------------------
// Discrete calculus

/// Two-point face differences. Faces on the box edge get 0.
inline VectorField discrete_gradient(const ScalarField& u) {
  const auto& dom = *u.domain;
  VectorField g(u.domain);
  const double inv_h = 1.0 / dom.h;
  for (int d = 0; d < dom.dim; ++d) {
    auto& out = g.comp[d];
    for (std::size_t i = 0; i < out.size(); ++i) {
      const auto f = dom.face_coords(d, i);
      if (f[d] == 0 || f[d] == dom.n[d]) continue;
      const auto [a, b] = dom.face_cells(d, f);
      out[i] = (u.at(b) - u.at(a)) * inv_h;
    }
  }
  return g;
}

inline ScalarField discrete_divergence(const VectorField& F) {
  const auto& dom = *F.domain;
  ScalarField div(F.domain);
  const double inv_h = 1.0 / dom.h;
  for (std::size_t c = 0; c < dom.cell_count(); ++c) {
    const auto ci = dom.cell_coords(c);
    double s = 0.0;
    for (int d = 0; d < dom.dim; ++d) {
      Index3 hi = ci;
      hi[d] += 1;
      s += F.comp[d][dom.face_index(d, hi[0], hi[1], hi[2])] -
           F.comp[d][dom.face_index(d, ci[0], ci[1], ci[2])];
    }
    div[c] = s * inv_h;
  }
  return div;
}

/// Weighted inner product over interior cells: sum a*b*w*h^dim in index order.
inline double weighted_inner(const ScalarField& a, const ScalarField& b,
                             const ScalarField& w) {
  require_same(a.domain, b.domain);
  require_same(a.domain, w.domain);
  const auto& dom = *a.domain;
  double s = 0.0;
  for (std::size_t c = 0; c < dom.cell_count(); ++c)
    if (dom.interior[c]) s += a[c] * b[c] * w[c];
  return s * dom.cell_volume();
}

/// Face version: interior faces only, with w averaged from the two cells.
inline double weighted_inner(const VectorField& a, const VectorField& b,
                             const ScalarField& w) {
  require_same(a.domain, b.domain);
  require_same(a.domain, w.domain);
  const auto& dom = *a.domain;
  double s = 0.0;
  for (int d = 0; d < dom.dim; ++d) {
    for (std::size_t i = 0; i < dom.face_count(d); ++i) {
      const auto f = dom.face_coords(d, i);
      if (!dom.face_interior(d, f)) continue;
      const auto [lo, hi] = dom.face_cells(d, f);
      const double wf = 0.5 * (w.at(lo) + w.at(hi));
      s += a.comp[d][i] * b.comp[d][i] * wf;
    }
  }
  return s * dom.cell_volume();
}

// ---------------------------------------------------------------------------
// Interpolation and surface flux

/// Multilinear interpolation of the staggered component `d` at point x.
/// Returns false when the stencil leaves the box.
inline bool interpolate_component(const VectorField& F, int d, const Vec3& x,
                                  double& out) {
  const auto& dom = *F.domain;
  const auto shape = dom.face_shape(d);
  std::array<int, 3> i0{0, 0, 0};
  std::array<double, 3> t{0.0, 0.0, 0.0};
  for (int a = 0; a < dom.dim; ++a) {
    double s = (x[a] - dom.lo[a]) / dom.h;
    if (a != d) s -= 0.5;
    const int base = static_cast<int>(std::floor(s));
    if (base < 0 || base + 1 > shape[a] - 1) return false;
    i0[a] = base;
    t[a] = s - base;
  }
  double acc = 0.0;
  const int corners = 1 << dom.dim;
  for (int m = 0; m < corners; ++m) {
    double wgt = 1.0;
    Index3 idx = i0;
    for (int a = 0; a < dom.dim; ++a) {
      const int bit = (m >> a) & 1;
      idx[a] += bit;
      wgt *= bit ? t[a] : 1.0 - t[a];
    }
    acc += wgt * F.comp[d][dom.face_index(d, idx[0], idx[1], idx[2])];
  }
  out = acc;
  return true;
}

struct Sphere {
  Vec3 center{0.0, 0.0, 0.0};
  double radius = 1.0;
};

/// The staircase boundary of the interior cell set, oriented outward.
struct RegionBoundary {};

using Surface = std::variant<Sphere, RegionBoundary>;

/// Quadrature nodes on a sphere: (point, unit normal, area weight).
struct SurfaceNode {
  Vec3 x;
  Vec3 normal;
  double weight;
};

inline std::vector<SurfaceNode> sphere_nodes(const Sphere& s, int dim, double h) {
  std::vector<SurfaceNode> nodes;
  const double pi = std::numbers::pi;
  if (dim == 2) {
    const int m = std::max(64, 8 * static_cast<int>(std::ceil(2 * pi * s.radius / h)));
    const double dt = 2 * pi / m;
    for (int k = 0; k < m; ++k) {
      const double t = (k + 0.5) * dt;
      const Vec3 nrm{std::cos(t), std::sin(t), 0.0};
      nodes.push_back({s.center + s.radius * nrm, nrm, s.radius * dt});
    }
  } else {
    const int nt = std::max(32, 4 * static_cast<int>(std::ceil(pi * s.radius / h)));
    const int np = 2 * nt;
    const double dt = pi / nt;
    const double dp = 2 * pi / np;
    for (int a = 0; a < nt; ++a) {
      const double th = (a + 0.5) * dt;
      for (int b = 0; b < np; ++b) {
        const double ph = (b + 0.5) * dp;
        const Vec3 nrm{std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph),
                       std::cos(th)};
        nodes.push_back({s.center + s.radius * nrm, nrm,
                         s.radius * s.radius * std::sin(th) * dt * dp});
      }
    }
  }
  return nodes;
}

/// Midpoint quadrature of F.n over a sphere (outward normal), or the exact
/// discrete flux through the staircase boundary of the interior cells.
inline double flux_integral(const VectorField& F, const Surface& surface) {
  const auto& dom = *F.domain;
  if (const auto* s = std::get_if<Sphere>(&surface)) {
    double total = 0.0;
    for (const auto& node : sphere_nodes(*s, dom.dim, dom.h)) {
      double fn = 0.0;
      for (int d = 0; d < dom.dim; ++d) {
        double v = 0.0;
        if (!interpolate_component(F, d, node.x, v))
          fail(ErrorKind::SurfaceOutsideDomain,
               "sphere leaves the grid box", s->radius);
        fn += v * node.normal[d];
      }
      total += fn * node.weight;
    }
    return total;
  }
  const double area = std::pow(dom.h, dom.dim - 1);
  double total = 0.0;
  for (int d = 0; d < dom.dim; ++d) {
    for (std::size_t i = 0; i < dom.face_count(d); ++i) {
      const auto f = dom.face_coords(d, i);
      const auto [a, b] = dom.face_cells(d, f);
      const bool in_a = dom.is_interior(a);
      const bool in_b = dom.is_interior(b);
      if (in_a == in_b) continue;
      total += (in_a ? 1.0 : -1.0) * F.comp[d][i] * area;
    }
  }
  return total;
}

}  // namespace glue
