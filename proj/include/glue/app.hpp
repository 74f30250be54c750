#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "glue/config.hpp"
#include "glue/constraints.hpp"
#include "glue/diagnostics.hpp"
#include "glue/io.hpp"
#include "glue/maxwell.hpp"
#include "glue/scalar_glue.hpp"

#ifndef GLUE_VERSION
#define GLUE_VERSION "0.0.0"
#endif

namespace glue::app {

inline constexpr int kSummarySchema = 1;

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> c{"glue-maxwell", "glue-scalar", "constraints",
                                          "kids",         "mass",        "constants"};
  return c;
}

struct RunOptions {
  std::string out_dir;  // overrides output.dir when set
  bool quiet = false;
  std::ostream* log = &std::cout;
  std::ostream* err = &std::cerr;
};

struct Outcome {
  int exit_code = 0;
  std::string status = "ok";
  double value = 0.0;
  std::string out_dir;
};

/// One-row table whose columns are fixed per command; anything a failed run
/// did not reach stays empty.
class Summary {
 public:
  explicit Summary(std::vector<std::string> columns) : cols_(std::move(columns)), vals_(cols_.size()) {}
  void set(const std::string& col, const std::string& v) { vals_.at(slot(col)) = v; }
  void set(const std::string& col, double v) { set(col, io::format_double(v)); }
  void set(const std::string& col, int v) { set(col, std::to_string(v)); }
  void set(const std::string& col, std::size_t v) { set(col, std::to_string(v)); }
  const std::vector<std::string>& columns() const { return cols_; }
  std::string csv() const {
    io::CsvTable t(cols_);
    t.add_row(vals_);
    return t.str();
  }

 private:
  std::size_t slot(const std::string& col) const {
    for (std::size_t i = 0; i < cols_.size(); ++i)
      if (cols_[i] == col) return i;
    fail(ErrorKind::ConfigError, "internal: no summary column " + col);
  }
  std::vector<std::string> cols_;
  std::vector<std::string> vals_;
};

inline std::vector<std::string> summary_columns(const std::string& command) {
  std::vector<std::string> c{"status", "reason_value"};
  auto add = [&c](std::initializer_list<const char*> more) { c.insert(c.end(), more.begin(), more.end()); };
  if (command == "glue-maxwell")
    add({"dim", "cells", "interior_cells", "h", "max_div", "interface_mismatch", "compatibility", "iterations",
         "final_residual", "projection_defect", "boundary_decay", "outer_max", "inner_dev"});
  else if (command == "glue-scalar")
    add({"dim", "cells", "interior_cells", "h", "eps", "iterations", "final_residual", "boundary_dg", "outside_dg",
         "sandwich_excess", "max_dg", "solvability_defect"});
  else if (command == "constraints")
    add({"dim", "data", "levels", "h_finest", "scalar_max", "vector_max", "order", "energy_holds",
         "energy_margin_min", "duality_samples", "duality_defect_max"});
  else if (command == "kids")
    add({"dim", "data", "levels", "h_finest", "candidates", "norm_N_max", "norm_Y_max", "order"});
  else if (command == "mass")
    add({"dim", "m", "h", "radii", "extrapolated", "relative_error", "decay_slope"});
  else if (command == "constants")
    add({"dim", "kind", "runs", "lambda_min", "lambda_max", "spread", "kernel_quotient_max",
         "gradient_ratio_min"});
  else
    fail(ErrorKind::ConfigError, "unknown command " + command);
  return c;
}

namespace detail {

inline const std::set<std::string> kGeneral{"command", "seed", "output.dir", "output.formats"};
inline const std::set<std::string> kGrid{"grid.dim", "grid.h", "grid.n", "grid.box", "grid.margin", "grid.levels"};
inline const std::set<std::string> kRegion{"region.kind",   "region.r1",     "region.r2",
                                           "region.theta1", "region.theta2", "region.rmax"};
inline const std::set<std::string> kWeights{"weights.kind", "weights.sigma", "weights.s",
                                            "weights.alpha", "weights.q",    "weights.beta"};
inline const std::set<std::string> kCutoff{"cutoff.t0", "cutoff.t1"};
inline const std::set<std::string> kSolver{"solver.tol", "solver.max_iter", "solver.strict"};

inline std::set<std::string> allowed_keys(const std::string& command) {
  std::set<std::string> k = kGeneral;
  auto add = [&k](const std::set<std::string>& s) { k.insert(s.begin(), s.end()); };
  if (command == "glue-maxwell") {
    add(kGrid), add(kRegion), add(kWeights), add(kCutoff), add(kSolver);
    add({"field.inner", "field.outer", "field.core"});
  } else if (command == "glue-scalar") {
    add(kGrid), add(kRegion), add(kWeights), add(kCutoff), add(kSolver);
    add({"metric.bump", "metric.eps", "metric.center", "metric.width", "scalar.deflation", "scalar.smallness"});
  } else if (command == "constraints") {
    add(kGrid), add(kRegion);
    add({"data.kind", "data.m", "data.amplitude", "adjoint.samples"});
  } else if (command == "kids") {
    add(kGrid), add(kRegion);
    add({"data.kind", "data.m"});
  } else if (command == "mass") {
    add({"grid.h", "mass.m", "mass.radii"});
  } else if (command == "constants") {
    add(kGrid), add(kRegion), add(kWeights);
    add({"constants.kind", "sweep.rmax", "sweep.cells_per_rmax"});
  }
  return k;
}

inline int dimension(const Config& cfg, int fallback = 2) {
  const int d = cfg.get_int("grid.dim", fallback);
  if (d != 2 && d != 3) fail(ErrorKind::ConfigError, "grid.dim must be 2 or 3", d);
  return d;
}

inline RegionSpec region_from(const Config& cfg, const std::string& fallback = "annulus") {
  const auto kind = cfg.get_choice("region.kind", fallback, {"annulus", "cone", "box"});
  if (kind == "annulus") {
    Annulus a;
    a.r1 = cfg.get_double("region.r1", a.r1);
    a.r2 = cfg.get_double("region.r2", a.r2);
    return a;
  }
  if (kind == "cone") {
    ConeShell c;
    c.theta1 = cfg.get_double("region.theta1", c.theta1);
    c.theta2 = cfg.get_double("region.theta2", c.theta2);
    c.rmax = cfg.get_double("region.rmax", c.rmax);
    return c;
  }
  return Box{};
}

inline WeightSpec weights_from(const Config& cfg, const WeightSpec& fallback) {
  static const std::map<std::string, std::size_t> index{{"power", 0}, {"exponential", 1}, {"cone", 2}, {"exotic", 3}};
  const std::string names[] = {"power", "exponential", "cone", "exotic"};
  const auto kind = cfg.get_choice("weights.kind", names[fallback.index()], {"power", "exponential", "cone", "exotic"});
  // Parameters left unset keep the fallback's values when the kind matches.
  const bool same = index.at(kind) == fallback.index();
  if (kind == "power") {
    PowerWeight w = same ? std::get<PowerWeight>(fallback) : PowerWeight{};
    w.sigma = cfg.get_double("weights.sigma", w.sigma);
    return w;
  }
  if (kind == "exponential") {
    ExponentialWeight w = same ? std::get<ExponentialWeight>(fallback) : ExponentialWeight{};
    w.alpha = cfg.get_double("weights.alpha", w.alpha);
    w.s = cfg.get_double("weights.s", w.s);
    return w;
  }
  if (kind == "cone") {
    ConeWeight w = same ? std::get<ConeWeight>(fallback) : ConeWeight{};
    w.q = cfg.get_double("weights.q", w.q);
    w.sigma = cfg.get_double("weights.sigma", w.sigma);
    return w;
  }
  ExoticWeight w = same ? std::get<ExoticWeight>(fallback) : ExoticWeight{};
  w.sigma = cfg.get_double("weights.sigma", w.sigma);
  w.s = cfg.get_double("weights.s", w.s);
  w.beta = cfg.get_double("weights.beta", w.beta);
  return w;
}

inline CutoffSpec cutoff_from(const Config& cfg) {
  CutoffSpec c;
  c.t0 = cfg.get_double("cutoff.t0", c.t0);
  c.t1 = cfg.get_double("cutoff.t1", c.t1);
  validate_cutoff(c);
  return c;
}

/// Spacing from grid.h, or from grid.n cells across a box of half-width
/// grid.box.
inline double spacing(const Config& cfg) {
  if (cfg.has("grid.h") && cfg.has("grid.n")) fail(ErrorKind::ConfigError, "set grid.h or grid.n, not both");
  if (cfg.has("grid.n")) {
    if (!cfg.has("grid.box")) fail(ErrorKind::ConfigError, "grid.n needs grid.box");
    const int n = cfg.get_int("grid.n", 0);
    if (n < 2) fail(ErrorKind::ConfigError, "grid.n must be at least 2", n);
    return 2.0 * cfg.get_double("grid.box", 0.0) / n;
  }
  const double h = cfg.get_double("grid.h", 0.1);
  if (!(h > 0.0)) fail(ErrorKind::ConfigError, "grid.h must be > 0", h);
  return h;
}

/// Box [-grid.box, grid.box]^dim, or the region's bounding box padded by
/// grid.margin (default three cells).
inline DomainPtr domain_from(const Config& cfg, const RegionSpec& region, int dim, double h) {
  Extents e;
  if (cfg.has("grid.box")) {
    const double b = cfg.get_double("grid.box", 0.0);
    if (!(b > 0.0)) fail(ErrorKind::ConfigError, "grid.box must be > 0", b);
    for (int d = 0; d < dim; ++d) e.lo[d] = -b, e.hi[d] = b;
  } else {
    if (std::holds_alternative<Box>(region)) fail(ErrorKind::ConfigError, "a box region needs grid.box");
    e = bounding_box(region, dim, cfg.get_double("grid.margin", 3.0 * h));
  }
  return build_domain(region, h, e, dim);
}

inline int levels(const Config& cfg) {
  const int l = cfg.get_int("grid.levels", 1);
  if (l < 1 || l > 4) fail(ErrorKind::ConfigError, "grid.levels must be in 1..4", l);
  return l;
}

inline double observed_order(double coarse, double fine) {
  if (!(coarse > 0.0) || !(fine > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return std::log2(coarse / fine);
}

template <class T>
double max_abs(const T& values) {
  double m = 0.0;
  for (double v : values) m = std::max(m, std::abs(v));
  return m;
}

/// Uniform [-1, 1) from the top 53 bits, so sampled cases agree across
/// standard libraries (std::uniform_real_distribution does not promise that).
struct Uniform {
  std::mt19937_64 rng;
  explicit Uniform(std::uint64_t seed) : rng(seed) {}
  double operator()() { return 2.0 * static_cast<double>(rng() >> 11) * 0x1.0p-53 - 1.0; }
};

inline std::function<double(const Vec3&)> random_smooth(Uniform& U, double scale) {
  const double a = U(), b = U(), c = U(), p = 3 * U() / scale, q = 3 * U() / scale, r = 3 * U() / scale, s = U();
  return [=](const Vec3& x) { return a * std::sin(p * x[0] + b) + c * std::cos(q * x[1] + r * x[2] + s); };
}

inline std::function<double(const Vec3&)> random_bump(Uniform& U, const Vec3& center, double w) {
  const Vec3 c{center[0] + 0.2 * w * U(), center[1] + 0.2 * w * U(), center[2] + 0.2 * w * U()};
  const double amp = U();
  return [=](const Vec3& x) { return amp * quartic_bump(x, c, w); };
}

}  // namespace detail

/// A randomized adjointness check around fixed data: compactly supported
/// perturbations (h, k) and a smooth candidate (N, Y).
struct DualityCase {
  SymTensorField h, k;
  KidCandidate xi;
};

/// Bumps sit near `center` with radius `w`; the candidate varies on the
/// length scale `scale`. Deterministic in `seed` on every platform.
inline DualityCase random_duality_case(const DomainPtr& dom, std::uint64_t seed, const Vec3& center, double w,
                                       double scale) {
  detail::Uniform U(seed);
  const int n = dom->dim;
  DualityCase dc{SymTensorField(dom), SymTensorField(dom), {ScalarField(dom), CellVectorField(dom)}};
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      auto bh = detail::random_bump(U, center, w), bk = detail::random_bump(U, center, w);
      for (std::size_t c = 0; c < dom->cell_count(); ++c) {
        const Vec3 x = dom->cell_center(c);
        dc.h(c, i, j) = bh(x);
        dc.k(c, i, j) = bk(x);
      }
    }
  auto fN = detail::random_smooth(U, scale);
  std::vector<std::function<double(const Vec3&)>> fY;
  for (int i = 0; i < n; ++i) fY.push_back(detail::random_smooth(U, scale));
  for (std::size_t c = 0; c < dom->cell_count(); ++c) {
    const Vec3 x = dom->cell_center(c);
    dc.xi.N[c] = 1.0 + fN(x);
    for (int i = 0; i < n; ++i) dc.xi.Y(c, i) = fY[i](x);
  }
  return dc;
}

/// |<DC(h,k), (N,Y)> - <(h,k), P*(N,Y)>| relative to the larger pairing.
inline double duality_defect(const InitialData& d, const DualityCase& dc) {
  const auto lin = linearized_constraint(d, dc.h, dc.k);
  const double lhs = pair_constraint(lin, dc.xi, d.g);
  const double rhs = pair_tensors(dc.h, dc.k, adjoint_constraint(d, dc.xi), d.g);
  const double scale = std::max(std::abs(lhs), std::abs(rhs));
  return scale > 0.0 ? std::abs(lhs - rhs) / scale : 0.0;
}

namespace detail {

struct Context {
  const Config& cfg;
  const RunOptions& opt;
  std::string dir;
  Summary& summary;
  std::map<std::string, std::string>& manifest;
  bool csv = true, vtk = true;

  std::ostream& log() const {
    static std::ostream null(nullptr);
    return opt.quiet ? null : *opt.log;
  }
  std::string path(const std::string& name) const { return (std::filesystem::path(dir) / name).string(); }
  void record_grid(const GridDomain& dom) {
    std::string g = std::to_string(dom.n[0]);
    for (int d = 1; d < dom.dim; ++d) g += "x" + std::to_string(dom.n[d]);
    manifest["grid"] = g;
    manifest["h"] = io::format_double(dom.h);
    manifest["cells"] = std::to_string(dom.cell_count());
    manifest["interior_cells"] = std::to_string(dom.interior_count);
  }
};

inline VectorField field_from(const std::string& kind, const DomainPtr& dom, double core) {
  if (kind == "dipole") return discrete_curl(dom, dipole_potential(dom->dim, core));
  if (kind == "monopole") return monopole_field(dom);
  return VectorField(dom);
}

inline void run_maxwell(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const int dim = dimension(cfg);
  const double h = spacing(cfg);
  const auto region = region_from(cfg);
  auto dom = domain_from(cfg, region, dim, h);
  ctx.record_grid(*dom);
  auto& S = ctx.summary;
  S.set("dim", dim), S.set("cells", dom->cell_count()), S.set("interior_cells", dom->interior_count);
  S.set("h", dom->h);

  const double core = cfg.get_double("field.core", 0.5);
  const auto inner = cfg.get_choice("field.inner", "dipole", {"dipole", "monopole", "zero"});
  const auto outer = cfg.get_choice("field.outer", "zero", {"dipole", "monopole", "zero"});
  GlueProblem p{field_from(inner, dom, core), field_from(outer, dom, core)};
  p.weights = weights_from(cfg, ExponentialWeight{});
  p.cutoff = cutoff_from(cfg);
  p.solver.tol = cfg.get_double("solver.tol", p.solver.tol);
  p.solver.max_iter = cfg.get_int("solver.max_iter", p.solver.max_iter);
  p.solver.strict = cfg.get_bool("solver.strict", p.solver.strict);
  validate_weight(p.weights, region, dim);

  S.set("compatibility", compatibility_check(p.E1, p.E2));
  ctx.log() << "glue-maxwell: " << ctx.manifest["grid"] << " cells, h = " << dom->h << ", " << inner << " inside, "
            << outer << " outside\n";
  const auto r = glue_fields(p);

  // Faces beyond the outer boundary should carry nothing, faces inside the
  // inner one should carry E1 unchanged.
  double outer_max = 0.0, inner_dev = 0.0;
  const bool layered = !std::holds_alternative<Box>(region);
  for (int d = 0; d < dim && layered; ++d)
    for (std::size_t i = 0; i < dom->face_count(d); ++i) {
      const double t = transverse_coordinate(region, dom->face_center(d, dom->face_coords(d, i)));
      if (t > 1.0) outer_max = std::max(outer_max, std::abs(r.E.comp[d][i] - p.E2.comp[d][i]));
      if (t < 0.0) inner_dev = std::max(inner_dev, std::abs(r.E.comp[d][i] - p.E1.comp[d][i]));
    }
  S.set("max_div", r.max_div);
  S.set("interface_mismatch", r.interface_mismatch);
  S.set("iterations", r.report.iterations);
  S.set("final_residual", r.report.final_residual);
  S.set("projection_defect", r.report.projection_defect);
  S.set("boundary_decay", r.report.boundary_decay);
  S.set("outer_max", layered ? outer_max : std::numeric_limits<double>::quiet_NaN());
  S.set("inner_dev", layered ? inner_dev : std::numeric_limits<double>::quiet_NaN());
  ctx.log() << "  iterations " << r.report.iterations << ", max |div E| " << r.max_div << ", boundary decay "
            << r.report.boundary_decay << "\n";
  if (ctx.vtk) {
    io::write_vtk(ctx.path("E.vtk"), *dom, {io::cell_average("E", r.E)});
    io::write_vtk(ctx.path("u.vtk"), *dom, {io::cell_scalar("u", r.u)});
    io::write_vtk(ctx.path("rho_chi.vtk"), *dom, {io::cell_scalar("rho_chi", r.rho_chi)});
  }
}

inline void run_scalar(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const int dim = dimension(cfg);
  const double h = spacing(cfg);
  const auto region = region_from(cfg);
  auto dom = domain_from(cfg, region, dim, h);
  ctx.record_grid(*dom);
  auto& S = ctx.summary;
  S.set("dim", dim), S.set("cells", dom->cell_count()), S.set("interior_cells", dom->interior_count);
  S.set("h", dom->h);

  const double eps = cfg.get_double("metric.eps", 1e-3);
  S.set("eps", eps);
  const auto bump = cfg.get_choice("metric.bump", "quadrupole", {"quadrupole", "offcenter"});
  const double cx = cfg.get_double("metric.center", 1.5), w = cfg.get_double("metric.width", 0.8);
  if (!(w > 0.0)) fail(ErrorKind::ConfigError, "metric.width must be > 0", w);
  SymTensorField g_hat =
      bump == "quadrupole"
          ? conformal_bump_metric(dom, eps, [](const Vec3& x) { return quadrupole_bump(x); })
          : conformal_bump_metric(dom, eps, [cx, w](const Vec3& x) { return quartic_bump(x, {cx, 0, 0}, w); });
  ScalarGlueProblem p{flat_metric(dom), g_hat};
  p.weights = weights_from(cfg, p.weights);
  p.cutoff = cutoff_from(cfg);
  p.tol = cfg.get_double("solver.tol", p.tol);
  p.max_iter = cfg.get_int("solver.max_iter", p.max_iter);
  p.linear.strict = cfg.get_bool("solver.strict", p.linear.strict);
  p.smallness = cfg.get_double("scalar.smallness", p.smallness);
  p.linear.deflation = cfg.get_choice("scalar.deflation", "kernel", {"kernel", "near-kernel"}) == "kernel"
                           ? Deflation::Kernel
                           : Deflation::NearKernel;

  ctx.log() << "glue-scalar: " << ctx.manifest["grid"] << " cells, h = " << dom->h << ", " << bump
            << " bump, eps = " << eps << "\n";
  const auto r = picard_glue(p);
  double sdef = 0.0;
  io::CsvTable trace({"iteration", "residual", "contraction", "solvability_defect", "linear_residual", "halvings"});
  for (const auto& s : r.trace) {
    sdef = std::max(sdef, s.solvability_defect);
    trace.add_row(std::vector<double>{double(s.iteration), s.residual, s.contraction, s.solvability_defect,
                                      s.linear_residual, double(s.halvings)});
    ctx.log() << "  iteration " << s.iteration << ": residual " << s.residual << "\n";
  }
  S.set("iterations", static_cast<int>(r.trace.size()) - 1);
  S.set("final_residual", r.final_residual);
  S.set("boundary_dg", r.boundary_dg);
  S.set("outside_dg", r.outside_dg);
  S.set("sandwich_excess", r.sandwich_excess);
  S.set("max_dg", max_abs(r.dg.values));
  S.set("solvability_defect", sdef);
  if (ctx.csv) trace.write(ctx.path("trace.csv"));
  if (ctx.vtk) {
    io::write_vtk(ctx.path("dg.vtk"), *dom, io::cell_tensor("dg", r.dg));
    io::write_vtk(ctx.path("residual.vtk"), *dom, {io::cell_scalar("residual", r.residual)});
    io::write_vtk(ctx.path("target.vtk"), *dom, {io::cell_scalar("target", r.target)});
  }
}

/// Initial data named by data.kind on one grid level.
inline InitialData data_from(const Config& cfg, const DomainPtr& dom) {
  const auto kind = cfg.get_choice("data.kind", "schwarzschild", {"flat", "schwarzschild", "perturbed"});
  if (kind == "schwarzschild") return schwarzschild_data(cfg.get_double("data.m", 1.0), dom->dim, dom);
  InitialData d{flat_metric(dom), SymTensorField(dom), 0.0};
  if (kind == "perturbed") {
    // Flat data plus smooth perturbations of amplitude data.amplitude.
    const double amp = cfg.get_double("data.amplitude", 0.1);
    Uniform U(static_cast<std::uint64_t>(cfg.get_int("seed", 0)) + 0x9e3779b97f4a7c15ull);
    const Vec3 hi = dom->hi();
    const double scale = 0.5 * (hi[0] - dom->lo[0]);
    for (int i = 0; i < dom->dim; ++i)
      for (int j = i; j < dom->dim; ++j) {
        auto pg = random_smooth(U, scale), pk = random_smooth(U, scale);
        for (std::size_t c = 0; c < dom->cell_count(); ++c) {
          const Vec3 x = dom->cell_center(c);
          d.g(c, i, j) += 0.3 * amp * pg(x);
          d.K(c, i, j) = amp * pk(x);
        }
      }
  }
  return d;
}

template <class Fn>
void for_levels(Context& ctx, Fn&& fn) {
  const auto& cfg = ctx.cfg;
  const int dim = dimension(cfg, 3);
  const double h0 = spacing(cfg);
  const auto region = region_from(cfg);
  const int L = levels(cfg);
  for (int l = 0; l < L; ++l) {
    auto dom = domain_from(cfg, region, dim, h0 / (1 << l));
    if (l == L - 1) ctx.record_grid(*dom);
    ctx.log() << "  level " << l << ": " << dom->n[0] << "^" << dim << " cells, h = " << dom->h << "\n";
    fn(l, dom, l == L - 1);
  }
  ctx.summary.set("dim", dim);
  ctx.summary.set("levels", L);
  ctx.summary.set("h_finest", h0 / (1 << (L - 1)));
}

inline void run_constraints(Context& ctx) {
  const auto& cfg = ctx.cfg;
  auto& S = ctx.summary;
  const int samples = cfg.get_int("adjoint.samples", 0);
  if (samples < 0) fail(ErrorKind::ConfigError, "adjoint.samples must be >= 0", samples);
  const auto seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  S.set("data", cfg.get("data.kind", "schwarzschild"));
  ctx.log() << "constraints: " << cfg.get("data.kind", "schwarzschild") << " data\n";
  io::CsvTable table({"level", "h", "scalar_max", "vector_max", "energy_margin_min"});
  std::vector<double> errs;
  double dmax = 0.0;
  bool holds = true;
  double margin_min = std::numeric_limits<double>::infinity();
  for_levels(ctx, [&](int l, const DomainPtr& dom, bool finest) {
    const auto d = data_from(cfg, dom);
    const auto cv = constraint_map(d);
    const auto ec = energy_condition(cv, d.g);
    double mmin = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < dom->cell_count(); ++c)
      if (evaluation_cell(*dom, c)) mmin = std::min(mmin, ec.margin[c]);
    const double smax = max_abs(cv.scalar_part.values), vmax = max_abs(cv.vector_part.values);
    errs.push_back(std::max(smax, vmax));
    table.add_row(std::vector<double>{double(l), dom->h, smax, vmax, mmin});
    if (!finest) return;
    S.set("scalar_max", smax);
    S.set("vector_max", vmax);
    holds = ec.holds;
    margin_min = mmin;
    // Bumps centred on an evaluation cell halfway through the interior.
    std::vector<std::size_t> eval;
    for (std::size_t c = 0; c < dom->cell_count(); ++c)
      if (evaluation_cell(*dom, c)) eval.push_back(c);
    const Vec3 hi = dom->hi();
    const double extent = hi[0] - dom->lo[0];
    for (int s = 0; s < samples && !eval.empty(); ++s) {
      Uniform pick(seed * 1000003ull + static_cast<std::uint64_t>(s));
      const std::size_t at = eval[static_cast<std::size_t>((pick() + 1.0) * 0.5 * eval.size()) % eval.size()];
      const Vec3 centre = std::holds_alternative<Box>(dom->region) ? Vec3{} : dom->cell_center(at);
      const auto dc = random_duality_case(dom, seed * 7919ull + static_cast<std::uint64_t>(s), centre,
                                          0.25 * extent, 0.5 * extent);
      const double def = duality_defect(d, dc);
      dmax = std::max(dmax, def);
      ctx.log() << "  duality sample " << s << ": defect " << def << "\n";
    }
    if (ctx.vtk) {
      io::write_vtk(ctx.path("constraints.vtk"), *dom,
                    {io::cell_scalar("scalar_part", cv.scalar_part), io::cell_scalar("energy_margin", ec.margin)});
    }
  });
  S.set("order", errs.size() >= 2 ? observed_order(errs[errs.size() - 2], errs.back())
                                  : std::numeric_limits<double>::quiet_NaN());
  S.set("energy_holds", holds ? "true" : "false");
  S.set("energy_margin_min", margin_min);
  S.set("duality_samples", samples);
  S.set("duality_defect_max", dmax);
  if (ctx.csv) table.write(ctx.path("levels.csv"));
}

struct NamedCandidate {
  std::string name;
  KidCandidate xi;
};

inline std::vector<NamedCandidate> kid_candidates(const Config& cfg, const DomainPtr& dom) {
  const int n = dom->dim;
  std::vector<NamedCandidate> out;
  auto covector = [&](auto&& f) {
    CellVectorField Y(dom);
    for (std::size_t c = 0; c < dom->cell_count(); ++c) {
      const Vec3 v = f(dom->cell_center(c));
      for (int i = 0; i < n; ++i) Y(c, i) = v[i];
    }
    return Y;
  };
  if (cfg.get("data.kind", "schwarzschild") == "schwarzschild") {
    const double m = cfg.get_double("data.m", 1.0);
    out.push_back({"static_lapse", {sample_cells(dom, [m, n](const Vec3& x) {
                                      const double q = m / (2.0 * std::pow(norm(x), n - 2));
                                      return (1.0 - q) / (1.0 + q);
                                    }),
                                    CellVectorField(dom)}});
    return out;
  }
  const char* axis = "xyz";
  out.push_back({"lapse_1", {ScalarField(dom, 1.0), CellVectorField(dom)}});
  for (int i = 0; i < n; ++i)
    out.push_back({std::string("lapse_") + axis[i],
                   {sample_cells(dom, [i](const Vec3& x) { return x[i]; }), CellVectorField(dom)}});
  for (int i = 0; i < n; ++i)
    out.push_back({std::string("translation_") + axis[i], {ScalarField(dom), covector([i](const Vec3&) {
                                                             Vec3 e{};
                                                             e[i] = 1.0;
                                                             return e;
                                                           })}});
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      out.push_back({std::string("rotation_") + axis[i] + axis[j], {ScalarField(dom), covector([i, j](const Vec3& x) {
                                                                       Vec3 y{};
                                                                       y[i] = -x[j];
                                                                       y[j] = x[i];
                                                                       return y;
                                                                     })}});
  return out;
}

inline void run_kids(Context& ctx) {
  const auto& cfg = ctx.cfg;
  auto& S = ctx.summary;
  const auto kind = cfg.get_choice("data.kind", "schwarzschild", {"flat", "schwarzschild"});
  S.set("data", kind);
  ctx.log() << "kids: " << kind << " data\n";
  io::CsvTable table({"level", "h", "candidate", "norm_N", "norm_Y"});
  std::vector<double> worst;
  double nN = 0.0, nY = 0.0;
  std::size_t count = 0;
  for_levels(ctx, [&](int l, const DomainPtr& dom, bool finest) {
    const auto d = data_from(cfg, dom);
    double w = 0.0;
    const auto cands = kid_candidates(cfg, dom);
    for (const auto& c : cands) {
      const auto r = kid_residual(d, c.xi);
      table.add_row({std::to_string(l), io::format_double(dom->h), c.name, io::format_double(r.norm_N),
                     io::format_double(r.norm_Y)});
      w = std::max({w, r.norm_N, r.norm_Y});
      if (finest) nN = std::max(nN, r.norm_N), nY = std::max(nY, r.norm_Y);
    }
    worst.push_back(w);
    count = cands.size();
  });
  S.set("candidates", count);
  S.set("norm_N_max", nN);
  S.set("norm_Y_max", nY);
  S.set("order", worst.size() >= 2 ? observed_order(worst[worst.size() - 2], worst.back())
                                   : std::numeric_limits<double>::quiet_NaN());
  ctx.log() << "  largest residual norm " << std::max(nN, nY) << "\n";
  if (ctx.csv) table.write(ctx.path("kids.csv"));
}

inline void run_mass(Context& ctx) {
  const auto& cfg = ctx.cfg;
  auto& S = ctx.summary;
  const double m = cfg.get_double("mass.m", 1.0);
  const double h = cfg.get_double("grid.h", 0.25);
  if (!(h > 0.0)) fail(ErrorKind::ConfigError, "grid.h must be > 0", h);
  const auto radii = cfg.get_doubles("mass.radii", {8.0, 16.0, 32.0});
  if (radii.size() < 2) fail(ErrorKind::ConfigError, "mass.radii needs at least two radii");
  for (double R : radii)
    if (!(R > 0.0)) fail(ErrorKind::ConfigError, "mass.radii must be positive", R);
  ctx.manifest["grid"] = "local-stencil";
  ctx.manifest["h"] = io::format_double(h);
  S.set("dim", 3), S.set("m", m), S.set("h", h);
  std::string rlist;
  for (double R : radii) rlist += (rlist.empty() ? "" : " ") + io::format_double(R);
  S.set("radii", rlist);
  ctx.log() << "mass: Schwarzschild m = " << m << ", radii " << rlist << "\n";
  const auto metric = schwarzschild_metric(m, 3);
  const auto rep = mass_sweep(radii, [&](double R) { return beig_mass(metric, R, h); });
  io::CsvTable table({"radius", "mass", "raw"});
  for (std::size_t i = 0; i < radii.size(); ++i)
    table.add_row(std::vector<double>{radii[i], rep.values[i], rep.raw_values[i]});
  S.set("extrapolated", rep.extrapolated);
  S.set("relative_error", m != 0.0 ? std::abs(rep.extrapolated - m) / std::abs(m) : std::abs(rep.extrapolated));
  S.set("decay_slope", rep.decay_slope);
  ctx.log() << "  extrapolated mass " << rep.extrapolated << "\n";
  if (ctx.csv) table.write(ctx.path("mass.csv"));
}

inline void run_constants(Context& ctx) {
  const auto& cfg = ctx.cfg;
  auto& S = ctx.summary;
  const auto kind = cfg.get_choice("constants.kind", "poincare", {"poincare", "korn"});
  S.set("kind", kind);
  const int dim = dimension(cfg, 2);
  const auto region = region_from(cfg);
  const auto w = weights_from(cfg, std::holds_alternative<ConeShell>(region) ? WeightSpec{ConeWeight{}}
                                                                             : WeightSpec{PowerWeight{}});
  // Either a dilation sweep of the cone shell (h tied to rmax) or plain
  // refinement levels of one region.
  struct Run {
    DomainPtr dom;
    double rmax;
  };
  std::vector<Run> runs;
  if (cfg.has("sweep.rmax")) {
    const auto* cone = std::get_if<ConeShell>(&region);
    if (!cone) fail(ErrorKind::ConfigError, "sweep.rmax needs region.kind = cone");
    const int per = cfg.get_int("sweep.cells_per_rmax", 32);
    if (per < 4) fail(ErrorKind::ConfigError, "sweep.cells_per_rmax must be at least 4", per);
    for (double R : cfg.get_doubles("sweep.rmax", {})) {
      ConeShell c = *cone;
      c.rmax = R;
      const double h = R / per;
      runs.push_back({build_domain(c, h, bounding_box(c, dim, 2.0 * h), dim), R});
    }
    if (runs.empty()) fail(ErrorKind::ConfigError, "sweep.rmax is empty");
  } else {
    const double h0 = spacing(cfg);
    for (int l = 0; l < levels(cfg); ++l)
      runs.push_back({domain_from(cfg, region, dim, h0 / (1 << l)), std::numeric_limits<double>::quiet_NaN()});
  }
  ctx.record_grid(*runs.back().dom);
  S.set("dim", dim);
  S.set("runs", runs.size());
  ctx.log() << "constants: " << kind << ", " << runs.size() << " run(s)\n";
  io::CsvTable table({"rmax", "h", "cells", "lambda", "eigen_residual", "iterations", "kernel_quotient_max",
                      "gradient_ratio"});
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0, kq = 0.0;
  double gr = std::numeric_limits<double>::infinity();
  for (const auto& run : runs) {
    RayleighResult eig;
    double ratio = std::numeric_limits<double>::quiet_NaN();
    if (kind == "poincare") {
      eig = poincare_constant(run.dom, w);
    } else {
      const auto rep = korn_constant(run.dom, w);
      eig = rep.eig;
      ratio = rep.gradient_ratio;
      gr = std::min(gr, ratio);
    }
    const double q = max_abs(eig.kernel_quotients);
    table.add_row(std::vector<double>{run.rmax, run.dom->h, double(run.dom->interior_count), eig.lambda,
                                      eig.eigen_residual, double(eig.iterations), q, ratio});
    lo = std::min(lo, eig.lambda), hi = std::max(hi, eig.lambda), kq = std::max(kq, q);
    ctx.log() << "  h = " << run.dom->h << ": lambda = " << eig.lambda << "\n";
  }
  S.set("lambda_min", lo);
  S.set("lambda_max", hi);
  S.set("spread", lo > 0.0 ? hi / lo - 1.0 : std::numeric_limits<double>::infinity());
  S.set("kernel_quotient_max", kq);
  S.set("gradient_ratio_min", kind == "korn" ? gr : std::numeric_limits<double>::quiet_NaN());
  if (ctx.csv) table.write(ctx.path("constants.csv"));
}

inline std::string manifest_text(const std::map<std::string, std::string>& m, const Config& cfg) {
  // Fixed order for the header keys, then the resolved configuration.
  static const char* order[] = {"glue_version", "command", "status", "reason_value", "config_hash",
                                "summary_schema", "summary_columns", "grid", "h", "cells", "interior_cells",
                                "threads"};
  std::string s;
  for (const char* k : order)
    if (auto it = m.find(k); it != m.end()) s += std::string(k) + " = " + it->second + "\n";
  s += "\n[config]\n" + cfg.canonical();
  return s;
}

}  // namespace detail

/// Runs `command` with `cfg`. Obstructions exit with 2, anything wrong with
/// the input with 1. Summary and manifest are written whenever the output
/// directory is usable.
inline Outcome run(std::string command, const Config& cfg, const RunOptions& opt = {}) {
  Outcome out;
  std::ostream& err = *opt.err;
  std::map<std::string, std::string> manifest;
  manifest["glue_version"] = GLUE_VERSION;
  manifest["threads"] = std::to_string(worker_count());
  std::unique_ptr<Summary> summary;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    if (command.empty()) command = cfg.get("command", "");
    if (command.empty()) fail(ErrorKind::ConfigError, "no command given");
    if (cfg.has("command") && cfg.get("command", "") != command)
      fail(ErrorKind::ConfigError, "config is for command " + cfg.get("command", "") + ", not " + command);
    manifest["command"] = command;
    manifest["config_hash"] = cfg.hash();
    summary = std::make_unique<Summary>(summary_columns(command));
    std::string cols;
    for (const auto& c : summary->columns()) cols += (cols.empty() ? "" : ",") + c;
    manifest["summary_schema"] = command + "/" + std::to_string(kSummarySchema);
    manifest["summary_columns"] = cols;
    out.out_dir = opt.out_dir.empty() ? cfg.get("output.dir", "glue-out") : opt.out_dir;
    std::error_code ec;
    std::filesystem::create_directories(out.out_dir, ec);
    if (ec || !std::filesystem::is_directory(out.out_dir))
      fail(ErrorKind::ConfigError, "cannot create output directory " + out.out_dir);
    cfg.check_known(detail::allowed_keys(command));
    cfg.get_int("seed", 0);

    detail::Context ctx{cfg, opt, out.out_dir, *summary, manifest};
    const auto formats = cfg.get_list("output.formats", {"csv", "vtk"});
    ctx.csv = ctx.vtk = false;
    for (const auto& f : formats) {
      if (f == "csv") ctx.csv = true;
      else if (f == "vtk") ctx.vtk = true;
      else fail(ErrorKind::ConfigError, "output.formats: unknown format " + f);
    }
    if (command == "glue-maxwell") detail::run_maxwell(ctx);
    else if (command == "glue-scalar") detail::run_scalar(ctx);
    else if (command == "constraints") detail::run_constraints(ctx);
    else if (command == "kids") detail::run_kids(ctx);
    else if (command == "mass") detail::run_mass(ctx);
    else detail::run_constants(ctx);
  } catch (const GlueError& e) {
    out.status = std::string(to_string(e.kind()));
    out.value = e.value();
    out.exit_code = e.is_obstruction() ? 2 : 1;
    err << e.what() << " (value = " << io::format_double(e.value()) << ")\n";
    if (e.is_obstruction())
      *opt.log << "reason=" << out.status << " value=" << io::format_double(e.value()) << "\n";
  }
  if (summary) {
    summary->set("status", out.status);
    if (out.exit_code != 0) summary->set("reason_value", out.value);
  }
  manifest["status"] = out.status;
  if (out.exit_code != 0) manifest["reason_value"] = io::format_double(out.value);
  if (!out.out_dir.empty() && std::filesystem::is_directory(out.out_dir)) {
    try {
      if (summary && out.exit_code != 1)
        io::open_output((std::filesystem::path(out.out_dir) / "summary.csv").string()) << summary->csv();
      io::open_output((std::filesystem::path(out.out_dir) / "manifest.txt").string())
          << detail::manifest_text(manifest, cfg);
    } catch (const GlueError& e) {
      err << e.what() << "\n";
      if (out.exit_code == 0) out.exit_code = 1;
    }
  }
  if (!opt.quiet && out.exit_code == 0) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    *opt.log << "wrote " << out.out_dir << " in " << secs << " s\n";
  }
  return out;
}

}  // namespace glue::app
