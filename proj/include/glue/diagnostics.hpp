#pragma once

// Schwarzschild data, the mass as a flux of the Einstein tensor, and the
// weighted Poincare and Korn constants as smallest generalized eigenvalues.

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include "glue/constraints.hpp"
#include "glue/elliptic.hpp"
#include "glue/weights.hpp"

namespace glue {

// ---------------------------------------------------------------------------
// Schwarzschild

/// Conformal factor of the time-symmetric Schwarzschild slice in n space
/// dimensions: g = (1 + m / (2 r^(n-2)))^(4/(n-2)) delta.
inline double schwarzschild_factor(double m, int n, double r) {
  if (n < 3) fail(ErrorKind::ParamOutOfRange, "Schwarzschild data needs n >= 3", n);
  return std::pow(1.0 + m / (2.0 * std::pow(r, n - 2)), 4.0 / (n - 2));
}

using MetricFunction = std::function<Mat3(const Vec3&)>;

inline MetricFunction schwarzschild_metric(double m, int n = 3) {
  return [m, n](const Vec3& x) {
    const double f = schwarzschild_factor(m, n, norm(x));
    Mat3 g{};
    for (int i = 0; i < n; ++i) g[i][i] = f;
    return g;
  };
}

/// Exact data on every cell within two layers of the interior; the remaining
/// cells carry the flat metric (they never enter a stencil).
inline InitialData schwarzschild_data(double m, int n, const DomainPtr& dom) {
  if (n != dom->dim)
    fail(ErrorKind::ParamOutOfRange, "Schwarzschild dimension must match the grid", n);
  if (m < 0.0) fail(ErrorKind::ParamOutOfRange, "mass must be non-negative", m);
  InitialData d{flat_metric(dom), SymTensorField(dom), 0.0};
  const int layers = 2;
  std::vector<std::uint8_t> near(dom->cell_count(), 0);
  for (std::size_t c = 0; c < dom->cell_count(); ++c) {
    if (!dom->interior[c]) continue;
    const auto ci = dom->cell_coords(c);
    Index3 lo{0, 0, 0}, hi{0, 0, 0};
    for (int a = 0; a < dom->dim; ++a) {
      lo[a] = std::max(0, ci[a] - layers);
      hi[a] = std::min(dom->n[a] - 1, ci[a] + layers);
    }
    for (int k = lo[2]; k <= hi[2]; ++k)
      for (int j = lo[1]; j <= hi[1]; ++j)
        for (int i = lo[0]; i <= hi[0]; ++i) near[dom->cell_index(Index3{i, j, k})] = 1;
  }
  const double horizon = std::pow(m / 2.0, 1.0 / (n - 2));
  for (std::size_t c = 0; c < dom->cell_count(); ++c) {
    if (!near[c]) continue;
    const double r = norm(dom->cell_center(c));
    if (m > 0.0 && r <= horizon)
      fail(ErrorKind::DomainContainsSingularity, "grid reaches r <= (m/2)^(1/(n-2))", r);
    const double f = schwarzschild_factor(m, n, r);
    for (int i = 0; i < n; ++i) d.g(c, i, i) = f;
  }
  return d;
}

// ---------------------------------------------------------------------------
// Mass

/// Einstein tensor G = Ric - R g / 2 from a metric jet.
inline Mat3 einstein_tensor(const MetricJet& J) {
  Mat3 G{};
  for (int i = 0; i < J.n; ++i)
    for (int j = 0; j < J.n; ++j) G[i][j] = J.ric[i][j] - 0.5 * J.R * J.g[i][j];
  return G;
}

/// Midpoint nodes on a coordinate sphere, independent of the grid spacing
/// (the integrand is smooth on the sphere).
inline std::vector<SurfaceNode> mass_nodes(double R, int nt = 48) {
  std::vector<SurfaceNode> nodes;
  const double pi = std::numbers::pi;
  const int np = 2 * nt;
  const double dt = pi / nt, dp = 2 * pi / np;
  for (int a = 0; a < nt; ++a) {
    const double th = (a + 0.5) * dt;
    for (int b = 0; b < np; ++b) {
      const double ph = (b + 0.5) * dp;
      const Vec3 nrm{std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th)};
      nodes.push_back({R * nrm, nrm, R * R * std::sin(th) * dt * dp});
    }
  }
  return nodes;
}

struct MassValue {
  /// -(1/8pi) of the flux; tends to the mass.
  double mass = 0.0;
  /// (1/16pi) of the same flux, the normalization as usually displayed;
  /// tends to -m/2.
  double raw = 0.0;
};

inline MassValue mass_from_flux(double flux) {
  const double pi = std::numbers::pi;
  return {-flux / (8.0 * pi), flux / (16.0 * pi)};
}

/// Flux of G_ij x^i n^j through the coordinate sphere r = R, with G from
/// central differences of an analytic metric on a local lattice of spacing h.
inline MassValue beig_mass(const MetricFunction& g, double R, double h) {
  const auto nodes = mass_nodes(R);
  std::vector<double> part(nodes.size());
  parallel_for(nodes.size(), [&](std::size_t k) {
    const Vec3 x0 = nodes[k].x;
    const MetricJet J = metric_jet_from(3, h, [&](const Index3& off) {
      return g(x0 + Vec3{off[0] * h, off[1] * h, off[2] * h});
    });
    const Mat3 G = einstein_tensor(J);
    double s = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) s += G[i][j] * x0[i] * nodes[k].normal[j];
    part[k] = s * nodes[k].weight;
  });
  double flux = 0.0;
  for (double v : part) flux += v;
  return mass_from_flux(flux);
}

/// Same flux for grid data, with G interpolated trilinearly between cell
/// centers. Every interpolation cell must be an evaluation cell.
inline MassValue beig_mass(const InitialData& data, double R) {
  const auto& dom = *data.g.domain;
  if (dom.dim != 3) fail(ErrorKind::ParamOutOfRange, "mass integral needs a 3D grid", dom.dim);
  const auto curv = curvature(data.g);
  double flux = 0.0;
  for (const auto& node : mass_nodes(R)) {
    Index3 i0{0, 0, 0};
    double t[3];
    for (int a = 0; a < 3; ++a) {
      const double s = (node.x[a] - dom.lo[a]) / dom.h - 0.5;
      i0[a] = static_cast<int>(std::floor(s));
      t[a] = s - i0[a];
      if (i0[a] < 0 || i0[a] + 1 >= dom.n[a])
        fail(ErrorKind::SurfaceOutsideDomain, "sphere leaves the grid", R);
    }
    Mat3 G{};
    for (int corner = 0; corner < 8; ++corner) {
      Index3 q = i0;
      double w = 1.0;
      for (int a = 0; a < 3; ++a) {
        const int bit = (corner >> a) & 1;
        q[a] += bit;
        w *= bit ? t[a] : 1.0 - t[a];
      }
      const std::size_t c = dom.cell_index(q);
      if (!evaluation_cell(dom, c))
        fail(ErrorKind::SurfaceOutsideDomain, "sphere leaves the curvature stencil region", R);
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
          G[i][j] += w * (curv.Ric(c, i, j) - 0.5 * curv.R[c] * data.g(c, i, j));
    }
    double s = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) s += G[i][j] * node.x[i] * node.normal[j];
    flux += s * node.weight;
  }
  return mass_from_flux(flux);
}

struct MassReport {
  std::vector<double> radii;
  std::vector<double> values;
  std::vector<double> raw_values;
  double extrapolated = 0.0;
  /// Log-log slope of |value - extrapolated| against R.
  double decay_slope = 0.0;
};

/// Polynomial extrapolation in 1/R to 1/R = 0 through the three largest radii.
inline double richardson_in_inverse_radius(const std::vector<double>& radii,
                                           const std::vector<double>& values) {
  const std::size_t n = radii.size();
  const std::size_t first = n > 3 ? n - 3 : 0;
  double out = 0.0;
  for (std::size_t i = first; i < n; ++i) {
    double L = 1.0;
    for (std::size_t j = first; j < n; ++j)
      if (j != i) L *= (0.0 - 1.0 / radii[j]) / (1.0 / radii[i] - 1.0 / radii[j]);
    out += L * values[i];
  }
  return out;
}

inline MassReport mass_sweep(const std::vector<double>& radii,
                             const std::function<MassValue(double)>& at_radius) {
  MassReport rep;
  rep.radii = radii;
  for (double R : radii) {
    const auto v = at_radius(R);
    rep.values.push_back(v.mass);
    rep.raw_values.push_back(v.raw);
  }
  rep.extrapolated = richardson_in_inverse_radius(radii, rep.values);
  // Least-squares slope of log|v - m| against log R.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int cnt = 0;
  for (std::size_t i = 0; i < radii.size(); ++i) {
    const double e = std::abs(rep.values[i] - rep.extrapolated);
    if (e <= 0.0) continue;
    const double X = std::log(radii[i]), Y = std::log(e);
    sx += X, sy += Y, sxx += X * X, sxy += X * Y;
    ++cnt;
  }
  if (cnt >= 2) rep.decay_slope = -(cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
  return rep;
}

// ---------------------------------------------------------------------------
// Weighted Poincare and Korn constants

/// Smallest eigenvalue of int phi^2 psi^2 |grad u|^2 / int psi^2 u^2 over u
/// orthogonal to the locally constant functions.
inline RayleighResult poincare_constant(const DomainPtr& dom, const WeightSpec& w,
                                        const RayleighOptions& opt = {}) {
  validate_weight(w, dom->region, dom->dim);
  const auto a = eval_coefficient(w, dom);
  const auto psi = eval_psi(w, dom);
  WeightedStiffness K(face_coefficients(a));
  const double vol = dom->cell_volume();
  Vector mass = K.gather(psi).cwiseAbs2() * vol;
  std::vector<Vector> kernel(K.component_count(), Vector::Zero(K.size()));
  for (std::size_t k = 0; k < K.size(); ++k) kernel[K.component()[k]][k] = 1.0;
  // K carries 1/h^2 per face; the energy is sum a_f (du)^2 h^(n-2).
  const double scale = vol;
  LinearOp A = [&K, scale](const Vector& x, Vector& y) {
    K.apply(x, y);
    y *= scale;
  };
  return rayleigh_minimize(A, K.diagonal() * scale, mass, kernel, opt);
}

/// Face-staggered vector fields on the faces of interior cells, with the
/// weighted symmetric-gradient and full-gradient energies as sparse forms.
class KornForms {
 public:
  KornForms(const DomainPtr& dom, const WeightSpec& w) : dom_(dom) {
    const auto& D = *dom;
    const int n = D.dim;
    validate_weight(w, D.region, n);
    const auto a = eval_coefficient(w, dom);
    const auto psi = eval_psi(w, dom);
    open_cells();
    label_cells();
    for (int d = 0; d < 3; ++d) index_[d].assign(D.face_count(d), -1);
    std::vector<double> mass;
    for (int d = 0; d < n; ++d) {
      for (std::size_t i = 0; i < D.face_count(d); ++i) {
        const auto f = D.face_coords(d, i);
        const auto [lo, hi] = D.face_cells(d, f);
        double s = 0.0;
        int cnt = 0;
        for (const auto& c : {lo, hi}) {
          if (!active(c)) continue;
          const double p = psi.at(c);
          s += p * p;
          ++cnt;
        }
        if (cnt == 0) continue;
        index_[d][i] = static_cast<long>(faces_.size());
        faces_.push_back({d, i});
        face_component_.push_back(active(lo) ? cell_component_[D.cell_index(lo)]
                                                    : cell_component_[D.cell_index(hi)]);
        mass.push_back(s / cnt * D.cell_volume());
      }
    }
    const auto N = static_cast<Eigen::Index>(faces_.size());
    mass_ = Eigen::Map<Vector>(mass.data(), N);
    std::vector<Eigen::Triplet<double>> ts, tg;
    const double h = D.h, vol = D.cell_volume();
    // Diagonal entries d_d Y_d at interior cells.
    for (std::size_t c = 0; c < D.cell_count(); ++c) {
      if (!active_[c]) continue;
      const auto ci = D.cell_coords(c);
      for (int d = 0; d < n; ++d) {
        Index3 up = ci;
        up[d] += 1;
        const long i0 = unknown(d, ci), i1 = unknown(d, up);
        const double wgt = a[c] * vol / (h * h);
        add_square(ts, {{i1, 1.0}, {i0, -1.0}}, wgt);
        add_square(tg, {{i1, 1.0}, {i0, -1.0}}, wgt);
      }
    }
    // Off-diagonal entries on edges whose four faces are unknowns of one
    // component, with the weight averaged over the interior cells around the
    // edge:
    // S_de = (d_e Y_d + d_d Y_e) / 2, counted twice in |S|^2.
    for (int d = 0; d < n; ++d) {
      for (int e = d + 1; e < n; ++e) {
        Index3 ext{D.n[0], D.n[1], D.n[2]};
        for (int k = 0; k < (n == 3 ? ext[2] + 1 : 1); ++k)
          for (int j = 0; j <= ext[1]; ++j)
            for (int i = 0; i <= ext[0]; ++i) {
              Index3 node{i, j, k};
              // Only the d and e indices are node positions; others are cells.
              bool skip = false;
              for (int q = 0; q < n; ++q)
                if (q != d && q != e && node[q] >= D.n[q]) skip = true;
              if (skip || node[d] < 1 || node[e] < 1 || node[d] >= D.n[d] || node[e] >= D.n[e])
                continue;
              // Y_d faces at node[d], straddling the edge in e.
              Index3 fd_hi = node, fd_lo = node;
              fd_lo[e] -= 1;
              // Y_e faces at node[e], straddling the edge in d.
              Index3 fe_hi = node, fe_lo = node;
              fe_lo[d] -= 1;
              const long a1 = unknown(d, fd_hi), a0 = unknown(d, fd_lo);
              const long b1 = unknown(e, fe_hi), b0 = unknown(e, fe_lo);
              if (a1 < 0 || a0 < 0 || b1 < 0 || b0 < 0) continue;
              const int comp = face_component_[a1];
              if (face_component_[a0] != comp || face_component_[b1] != comp ||
                  face_component_[b0] != comp)
                continue;
              double asum = 0.0;
              int cnt = 0;
              for (int sd : {-1, 0})
                for (int se : {-1, 0}) {
                  Index3 c = node;
                  c[d] += sd;
                  c[e] += se;
                  if (!active(c)) continue;
                  asum += a.at(c);
                  ++cnt;
                }
              const double wgt = asum / cnt * vol / (h * h);
              add_square(ts, {{a1, 0.5}, {a0, -0.5}, {b1, 0.5}, {b0, -0.5}}, 2.0 * wgt);
              add_square(tg, {{a1, 1.0}, {a0, -1.0}}, wgt);
              add_square(tg, {{b1, 1.0}, {b0, -1.0}}, wgt);
            }
      }
    }
    S_.resize(N, N);
    S_.setFromTriplets(ts.begin(), ts.end());
    G_.resize(N, N);
    G_.setFromTriplets(tg.begin(), tg.end());
  }

  Eigen::Index size() const { return static_cast<Eigen::Index>(faces_.size()); }
  const Eigen::SparseMatrix<double>& symmetric_form() const { return S_; }
  const Eigen::SparseMatrix<double>& gradient_form() const { return G_; }
  const Vector& mass() const { return mass_; }

  /// Samples a cell-space vector function on the unknown faces.
  Vector sample(const std::function<Vec3(const Vec3&)>& Y) const {
    Vector v(size());
    for (Eigen::Index k = 0; k < size(); ++k) {
      const auto& [d, i] = faces_[static_cast<std::size_t>(k)];
      v[k] = Y(dom_->face_center(d, dom_->face_coords(d, i)))[d];
    }
    return v;
  }

  int component_count() const { return components_; }

  /// Translations and infinitesimal rotations of each face-connected
  /// component of the interior cells, about its centroid.
  std::vector<Vector> rigid_motions() const {
    const int n = dom_->dim;
    std::vector<Vector> out;
    for (int comp = 0; comp < components_; ++comp) {
      Vec3 c{};
      double cnt = 0.0;
      for (std::size_t k = 0; k < cell_component_.size(); ++k)
        if (cell_component_[k] == comp) {
          c = c + dom_->cell_center(k);
          cnt += 1.0;
        }
      c = (1.0 / cnt) * c;
      auto restrict = [&](Vector v) {
        for (Eigen::Index k = 0; k < v.size(); ++k)
          if (face_component_[static_cast<std::size_t>(k)] != comp) v[k] = 0.0;
        return v;
      };
      for (int d = 0; d < n; ++d)
        out.push_back(restrict(sample([d](const Vec3&) {
          Vec3 e{};
          e[d] = 1.0;
          return e;
        })));
      for (int d = 0; d < n; ++d)
        for (int e = d + 1; e < n; ++e)
          out.push_back(restrict(sample([=](const Vec3& x) {
            Vec3 y{};
            y[d] = -(x[e] - c[e]);
            y[e] = x[d] - c[d];
            return y;
          })));
    }
    return out;
  }

 private:
  long unknown(int d, const Index3& f) const {
    return index_[d][dom_->face_index(d, f[0], f[1], f[2])];
  }
  static void add_square(std::vector<Eigen::Triplet<double>>& t,
                         std::initializer_list<std::pair<long, double>> row, double w) {
    for (const auto& [i, a] : row)
      for (const auto& [j, b] : row) t.emplace_back(i, j, w * a * b);
  }

  bool active(const Index3& c) const { return dom_->in_box(c) && active_[dom_->cell_index(c)]; }

  /// Keeps the interior cells covered by a fully interior 2^n block. Cells
  /// attached to the rest only through edges or corners would otherwise
  /// carry zero-energy sliding modes.
  void open_cells() {
    const auto& D = *dom_;
    active_.assign(D.cell_count(), 0);
    const int kmax = D.dim == 3 ? D.n[2] - 1 : 1;
    for (int k = 0; k < kmax; ++k)
      for (int j = 0; j + 1 < D.n[1]; ++j)
        for (int i = 0; i + 1 < D.n[0]; ++i) {
          bool full = true;
          for (int c = 0; c < (1 << D.dim) && full; ++c)
            full = D.is_interior(Index3{i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1)});
          if (!full) continue;
          for (int c = 0; c < (1 << D.dim); ++c)
            active_[D.cell_index(Index3{i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1)})] = 1;
        }
  }

  void label_cells() {
    const auto& D = *dom_;
    cell_component_.assign(D.cell_count(), -1);
    std::vector<std::size_t> stack;
    for (std::size_t seed = 0; seed < D.cell_count(); ++seed) {
      if (!active_[seed] || cell_component_[seed] >= 0) continue;
      cell_component_[seed] = components_;
      stack.push_back(seed);
      while (!stack.empty()) {
        const auto c = D.cell_coords(stack.back());
        stack.pop_back();
        for (int d = 0; d < D.dim; ++d)
          for (int s : {-1, 1}) {
            Index3 q = c;
            q[d] += s;
            if (!active(q)) continue;
            const std::size_t qi = D.cell_index(q);
            if (cell_component_[qi] >= 0) continue;
            cell_component_[qi] = components_;
            stack.push_back(qi);
          }
      }
      ++components_;
    }
  }

  DomainPtr dom_;
  std::vector<std::uint8_t> active_;
  std::vector<int> cell_component_;
  std::vector<int> face_component_;
  int components_ = 0;
  std::array<std::vector<long>, 3> index_;
  std::vector<std::pair<int, std::size_t>> faces_;
  Vector mass_;
  Eigen::SparseMatrix<double> S_, G_;
};

struct KornReport {
  RayleighResult eig;
  /// int |grad Y|^2 w / int |S(Y)|^2 w at the minimizer.
  double gradient_ratio = 0.0;
};

inline KornReport korn_constant(const DomainPtr& dom, const WeightSpec& w,
                                const RayleighOptions& opt = {}) {
  KornForms F(dom, w);
  const auto& S = F.symmetric_form();
  LinearOp A = [&S](const Vector& x, Vector& y) { y = S * x; };
  KornReport rep;
  // Direct inner solves on S + delta B; the tiny shift only lifts the rigid
  // motions, which the iteration deflates anyway.
  const double delta = 1e-6 * S.diagonal().sum() / F.mass().sum();
  Eigen::SparseMatrix<double> shifted = S;
  for (Eigen::Index i = 0; i < S.rows(); ++i) shifted.coeffRef(i, i) += delta * F.mass()[i];
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(shifted);
  if (ldlt.info() != Eigen::Success)
    fail(ErrorKind::NoConvergence, "factorization of the Korn form failed", delta);
  InnerSolve solve = [&ldlt](const Vector& b, Vector& y) { y = ldlt.solve(b); };
  rep.eig = rayleigh_minimize(A, S.diagonal(), F.mass(), F.rigid_motions(), opt, solve);
  const Vector& y = rep.eig.minimizer;
  rep.gradient_ratio = y.dot(F.gradient_form() * y) / y.dot(S * y);
  return rep;
}

}  // namespace glue
