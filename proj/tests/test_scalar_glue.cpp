#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <optional>

#include "glue/scalar_glue.hpp"

using namespace glue;

namespace {

template <class F>
std::optional<ErrorKind> error_of(F&& f) {
  try {
    f();
  } catch (const GlueError& e) {
    return e.kind();
  }
  return std::nullopt;
}

DomainPtr annulus2(double h) {
  Annulus a{1.0, 3.0};
  return build_domain(a, h, bounding_box(a, 2, 3 * h), 2);
}

double max_abs(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double rows_max(const ScalarGlueLayout& L, const ScalarField& f) {
  double m = 0;
  for (std::size_t c : L.rows()) m = std::max(m, std::abs(f[c]));
  return m;
}

// R from the local stencil on every cell with a full neighbourhood, including
// the layer outside the region that scalar_curvature skips.
ScalarField stencil_curvature(const SymTensorField& g) {
  const auto& D = *g.domain;
  ScalarField R(g.domain);
  for (std::size_t c = 0; c < D.cell_count(); ++c)
    if (D.clearance(D.cell_coords(c)) >= 1) R[c] = metric_jet(g, c).R;
  return R;
}

// Central difference of R along h, Richardson-combined from t and t/2.
ScalarField curvature_derivative(const SymTensorField& g, const SymTensorField& h, double t) {
  auto at = [&](double s) {
    SymTensorField p = g;
    for (std::size_t k = 0; k < p.values.size(); ++k) p.values[k] += s * h.values[k];
    return stencil_curvature(p);
  };
  const auto a = at(t), b = at(-t), c = at(t / 2), d = at(-t / 2);
  ScalarField out(g.domain);
  for (std::size_t k = 0; k < out.values.size(); ++k) {
    const double d1 = (a[k] - b[k]) / (2 * t), d2 = (c[k] - d[k]) / t;
    out[k] = (4 * d2 - d1) / 3;
  }
  return out;
}

// Smooth symmetric perturbation, zero off the region.
SymTensorField region_tensor(const DomainPtr& dom) {
  SymTensorField h(dom);
  for (std::size_t c = 0; c < dom->cell_count(); ++c) {
    if (!dom->interior[c]) continue;
    const Vec3 x = dom->cell_center(c);
    h(c, 0, 0) = std::sin(x[0]) * std::cos(0.7 * x[1]);
    h(c, 0, 1) = 0.3 * x[0] * x[1];
    h(c, 1, 1) = std::exp(-0.2 * dot(x, x));
  }
  return h;
}

// Discrete DR* as the adjoint of the probe matrix in the dmu_g pairings.
Eigen::VectorXd probe_adjoint(const ScalarGlueLayout& L, const SymTensorField& g,
                              const Eigen::SparseMatrix<double>& A, const Eigen::VectorXd& N) {
  const auto& D = *L.domain();
  const int n = D.dim, nc = sym_components(n);
  Eigen::VectorXd muN(N.size());
  for (std::size_t k = 0; k < L.rows().size(); ++k) {
    Mat3 gi;
    double det;
    spd_inverse(sym_at(g, L.rows()[k]), n, gi, det);
    muN[k] = std::sqrt(det) * D.cell_volume() * N[k];
  }
  const Eigen::VectorXd At = A.transpose() * muN;
  Eigen::VectorXd out(At.size());
  for (std::size_t k = 0; k < L.cols().size(); ++k) {
    Mat3 gi;
    double det;
    spd_inverse(sym_at(g, L.cols()[k]), n, gi, det);
    const Eigen::MatrixXd Q = detail::packed_pairing(gi, n) * (std::sqrt(det) * D.cell_volume());
    out.segment(k * nc, nc) = Q.ldlt().solve(At.segment(k * nc, nc));
  }
  return out;
}

// Removes the dmu-weighted projection onto {1, x^i} from a row vector.
Eigen::VectorXd without_affine(const ScalarGlueLayout& L, const SymTensorField& g, Eigen::VectorXd N) {
  const auto& D = *L.domain();
  const int n = D.dim;
  const auto m = static_cast<Eigen::Index>(L.rows().size());
  Eigen::MatrixXd Z(m, n + 1);
  Eigen::VectorXd mu(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const Vec3 x = D.cell_center(L.rows()[k]);
    Z(k, 0) = 1;
    for (int i = 0; i < n; ++i) Z(k, 1 + i) = x[i];
    Mat3 gi;
    double det;
    spd_inverse(sym_at(g, L.rows()[k]), n, gi, det);
    mu[k] = std::sqrt(det);
  }
  const Eigen::MatrixXd ZM = Z.transpose() * mu.asDiagonal();
  N -= Z * (ZM * Z).ldlt().solve(ZM * N);
  return N;
}

SymTensorField quadrupole_metric(const DomainPtr& dom, double eps) {
  return conformal_bump_metric(dom, eps, [](const Vec3& x) { return quadrupole_bump(x); });
}

SymTensorField off_center_metric(const DomainPtr& dom, double eps) {
  return conformal_bump_metric(dom, eps, [](const Vec3& x) { return quartic_bump(x, {1.5, 0, 0}, 0.8); });
}

}  // namespace

TEST(Target, VanishesForScalarFlatPair) {
  auto dom = annulus2(0.1);
  auto g = flat_metric(dom);
  SymTensorField gh = g;
  for (double& v : gh.values) v *= 1.21;
  const auto t = interpolated_target(g, gh, eval_cutoff({}, dom));
  EXPECT_LE(max_abs(t.values), 1e-12);
}

TEST(Target, ConformalBumpFollowsClosedForm) {
  // g_hat = e^{2f} delta in 2D has R = -2 e^{-2f} Laplacian(f).
  const Vec3 c{2.0, 0.3, 0};
  auto f = [&](const Vec3& x) { return 0.2 * std::exp(-dot(x - c, x - c)); };
  auto lap = [&](const Vec3& x) {
    const double r2 = dot(x - c, x - c);
    return 0.2 * std::exp(-r2) * (4 * r2 - 4);
  };
  auto err = [&](double h) {
    auto dom = annulus2(h);
    auto g = flat_metric(dom);
    SymTensorField gh(dom);
    for (std::size_t k = 0; k < dom->cell_count(); ++k) {
      const double e = std::exp(2 * f(dom->cell_center(k)));
      gh(k, 0, 0) = gh(k, 1, 1) = e;
    }
    const auto chi = eval_cutoff({}, dom);
    const auto t = interpolated_target(g, gh, chi);
    double m = 0;
    for (std::size_t k = 0; k < dom->cell_count(); ++k) {
      if (!dom->interior[k]) continue;
      const Vec3 x = dom->cell_center(k);
      const double exact = chi[k] * (-2 * std::exp(-2 * f(x)) * lap(x));
      m = std::max(m, std::abs(t[k] - exact));
    }
    return m;
  };
  const double coarse = err(0.1), fine = err(0.05);
  EXPECT_LE(fine, 5e-3);
  EXPECT_NEAR(std::log2(coarse / fine), 2.0, 0.3);
}

TEST(Layout, NeedsMarginAroundTheRegion) {
  Annulus a{1.0, 3.0};
  auto tight = build_domain(a, 0.1, bounding_box(a, 2, 0.1), 2);
  EXPECT_EQ(error_of([&] { ScalarGlueLayout L(tight); }), ErrorKind::ParamOutOfRange);
  ScalarGlueLayout L(annulus2(0.1));
  EXPECT_GT(L.rows().size(), L.cols().size());
}

TEST(Probe, MatchesDirectDifferencesOfCurvature) {
  auto dom = annulus2(0.1);
  auto g = quadrupole_metric(dom, 0.05);
  ScalarGlueLayout L(dom);
  const auto A = probe_linearized_curvature(L, g);
  const auto h = region_tensor(dom);
  const int nc = h.ncomp();
  Eigen::VectorXd hp(A.cols());
  for (std::size_t k = 0; k < L.cols().size(); ++k)
    for (int p = 0; p < nc; ++p) hp[k * nc + p] = h.values[L.cols()[k] * nc + p];
  const Eigen::VectorXd Ah = A * hp;
  const auto oracle = curvature_derivative(g, h, 1e-3);
  double err = 0;
  for (std::size_t k = 0; k < L.rows().size(); ++k) err = std::max(err, std::abs(Ah[k] - oracle[L.rows()[k]]));
  EXPECT_LE(err, 1e-7 * rows_max(L, oracle));
}

TEST(Probe, AdjointApproximatesTheContinuumFormula) {
  // DR*(N) = -(Laplacian N) g + Hess N - N Ric, i.e. the first block of the
  // constraint adjoint with K = 0, Y = 0. Smooth conformal metric so the
  // truncation error is cleanly second order.
  auto err = [](double h) {
    auto dom = annulus2(h);
    auto g = conformal_bump_metric(dom, 1.0, [](const Vec3& x) {
      const Vec3 c{0.5, 1.6, 0};
      return 0.05 * std::exp(-dot(x - c, x - c));
    });
    ScalarGlueLayout L(dom);
    const auto A = probe_linearized_curvature(L, g);
    auto Nf = [](const Vec3& x) { return 1 + 0.3 * x[0] + 0.2 * x[1] * x[1]; };
    Eigen::VectorXd N(L.rows().size());
    for (std::size_t k = 0; k < L.rows().size(); ++k) N[k] = Nf(dom->cell_center(L.rows()[k]));
    const auto dual = probe_adjoint(L, g, A, N);
    KidCandidate xi{sample_cells(dom, Nf), CellVectorField(dom)};
    const auto P = adjoint_constraint({g, SymTensorField(dom), 0.0}, xi);
    const int nc = g.ncomp();
    double m = 0, scale = 0;
    for (std::size_t k = 0; k < L.cols().size(); ++k)
      for (int p = 0; p < nc; ++p) {
        const double v = P.first.values[L.cols()[k] * nc + p];
        m = std::max(m, std::abs(dual[k * nc + p] - v));
        scale = std::max(scale, std::abs(v));
      }
    return m / scale;
  };
  const double coarse = err(0.1), fine = err(0.05);
  EXPECT_LE(fine, 1e-2);
  EXPECT_NEAR(std::log2(coarse / fine), 2.0, 0.3);
}

TEST(LinearCorrection, ZeroResidualGivesZeroCorrection) {
  auto dom = annulus2(0.1);
  const auto c = linear_correction(flat_metric(dom), ScalarField(dom), ExponentialWeight{0.0, 4.0});
  EXPECT_EQ(max_abs(c.dg.values), 0.0);
}

TEST(LinearCorrection, FlatBaseReproducesBandSource) {
  // A discrete Laplacian of a compact bump has no affine moments, so the
  // source is in the range and must be reproduced exactly.
  auto dom = annulus2(0.1);
  auto g = flat_metric(dom);
  ScalarGlueLayout L(dom);
  auto psi = sample_cells(dom, [](const Vec3& x) { return quartic_bump(x, {2.0, 0.2, 0}, 0.35); });
  ScalarField r(dom);
  const double h = dom->h;
  for (std::size_t c : L.rows()) {
    const auto q = dom->cell_coords(c);
    double lap = -4 * psi[c];
    for (int a = 0; a < 2; ++a)
      for (int s : {-1, 1}) {
        Index3 nb = q;
        nb[a] += s;
        lap += psi[dom->cell_index(nb)];
      }
    r[c] = 1e-3 * lap / (h * h);
  }
  const auto corr = linear_correction(g, r, ExponentialWeight{0.0, 4.0});
  EXPECT_LE(corr.linear_residual, 1e-8);
  EXPECT_LE(corr.solvability_defect, 1e-8);
  const auto DR = curvature_derivative(g, corr.dg, 1.0);
  double err = 0;
  for (std::size_t c : L.rows()) err = std::max(err, std::abs(DR[c] - r[c]));
  EXPECT_LE(err, 1e-8 * rows_max(L, r));
}

TEST(LinearCorrection, RecoversManufacturedSolution) {
  auto dom = annulus2(0.1);
  auto g = quadrupole_metric(dom, 1e-2);
  ScalarGlueLayout L(dom);
  const auto A = probe_linearized_curvature(L, g);
  Eigen::VectorXd N(L.rows().size());
  for (std::size_t k = 0; k < L.rows().size(); ++k) {
    const Vec3 x = dom->cell_center(L.rows()[k]);
    N[k] = std::cos(x[0]) * std::sin(0.8 * x[1]) + 0.1 * x[0] * x[0];
  }
  N = without_affine(L, g, N);
  const auto a = eval_coefficient(ExponentialWeight{0.0, 4.0}, dom);
  const int nc = g.ncomp();
  Eigen::VectorXd dg = probe_adjoint(L, g, A, N);
  for (std::size_t k = 0; k < L.cols().size(); ++k) dg.segment(k * nc, nc) *= a[L.cols()[k]];
  const Eigen::VectorXd rv = A * dg;
  ScalarField r(dom);
  for (std::size_t k = 0; k < L.rows().size(); ++k) r[L.rows()[k]] = rv[k];
  const auto corr = linear_correction(g, r, ExponentialWeight{0.0, 4.0});
  double err = 0;
  for (std::size_t k = 0; k < L.cols().size(); ++k)
    for (int p = 0; p < nc; ++p) err = std::max(err, std::abs(corr.dg.values[L.cols()[k] * nc + p] - dg[k * nc + p]));
  EXPECT_LE(err, 1e-6 * dg.cwiseAbs().maxCoeff());
}

TEST(LinearCorrection, StrictModeRejectsMonopoleSource) {
  auto dom = annulus2(0.1);
  auto r = sample_cells(dom, [](const Vec3& x) { return quartic_bump(x, {2.0, 0, 0}, 0.4); });
  const auto loose = linear_correction(flat_metric(dom), r, ExponentialWeight{0.0, 4.0});
  EXPECT_GT(loose.solvability_defect, 1e-2);
  LinearCorrectionOptions strict;
  strict.strict = true;
  EXPECT_EQ(error_of([&] { linear_correction(flat_metric(dom), r, ExponentialWeight{0.0, 4.0}, strict); }),
            ErrorKind::NetSourceMismatch);
  // On a flat base the affine functions are an exact kernel for both modes.
  LinearCorrectionOptions cont;
  cont.deflation = Deflation::NearKernel;
  const auto c = linear_correction(flat_metric(dom), r, ExponentialWeight{0.0, 4.0}, cont);
  EXPECT_NEAR(c.solvability_defect, loose.solvability_defect, 1e-6 * loose.solvability_defect);
  EXPECT_NEAR(max_abs(c.dg.values), max_abs(loose.dg.values), 1e-6 * max_abs(loose.dg.values));
}

TEST(LinearCorrection, NearKernelDeflationKeepsCorrectionSmallOffFlat) {
  // An off-centre bump has a first-order component along the continued
  // affine modes. Solving through them amplifies it; excluding them leaves
  // it as a defect.
  auto dom = annulus2(0.1);
  auto g = off_center_metric(dom, 1e-3);
  const auto chi = eval_cutoff({}, dom);
  const auto base = blend_metrics(flat_metric(dom), g, chi);
  const auto R = stencil_curvature(base), Rh = stencil_curvature(g);
  ScalarGlueLayout L(dom);
  ScalarField r(dom);
  for (std::size_t c : L.rows()) r[c] = chi[c] * Rh[c] - R[c];
  LinearCorrectionOptions cont;
  cont.deflation = Deflation::NearKernel;
  const auto small = linear_correction(base, r, ExponentialWeight{0.0, 4.0}, cont);
  const auto large = linear_correction(base, r, ExponentialWeight{0.0, 4.0});
  EXPECT_LE(small.linear_residual, 1e-8);
  EXPECT_GT(small.solvability_defect, 1e-3);
  EXPECT_LE(max_abs(small.dg.values), rows_max(L, r));
  EXPECT_GT(max_abs(large.dg.values), 3 * max_abs(small.dg.values));
}

TEST(Picard, IdenticalMetricsNeedNoCorrection) {
  auto dom = annulus2(0.1);
  auto g = quadrupole_metric(dom, 1e-3);
  const auto r = picard_glue({g, g});
  EXPECT_EQ(r.trace.size(), 1u);
  EXPECT_EQ(max_abs(r.dg.values), 0.0);
}

TEST(Picard, ScalarFlatInputsGiveScalarFlatOutput) {
  auto dom = annulus2(0.1);
  auto g = flat_metric(dom);
  SymTensorField gh = g;
  for (double& v : gh.values) v *= 1.002;
  const auto r = picard_glue({g, gh});
  EXPECT_LE(r.final_residual, 1e-8);
  ScalarGlueLayout L(dom);
  EXPECT_LE(rows_max(L, stencil_curvature(r.metric)), 1e-8);
}

TEST(Picard, QuadrupoleBumpGluesWithinTolerance) {
  auto dom = annulus2(0.1);
  const auto r = picard_glue({flat_metric(dom), quadrupole_metric(dom, 1e-3)});
  EXPECT_LE(r.trace.size(), 11u);
  EXPECT_LE(r.final_residual, 1e-8);
  EXPECT_LE(r.sandwich_excess, 1e-8);
  EXPECT_LE(r.boundary_dg, 1e-8);
  EXPECT_EQ(r.outside_dg, 0.0);
  // Residuals fall superlinearly once the step is accepted in full.
  for (std::size_t i = 2; i < r.trace.size(); ++i) EXPECT_LT(r.trace[i].contraction, 0.1);
}

TEST(Picard, LargePerturbationIsRejected) {
  auto dom = annulus2(0.1);
  const auto kind = error_of([&] { picard_glue({flat_metric(dom), quadrupole_metric(dom, 0.5)}); });
  ASSERT_TRUE(kind.has_value());
  EXPECT_TRUE(*kind == ErrorKind::NoConvergence || *kind == ErrorKind::MetricNotPositive);
}

TEST(Picard, RejectsBadParameters) {
  auto dom = annulus2(0.1);
  ScalarGlueProblem p{flat_metric(dom), flat_metric(dom)};
  p.tol = 0;
  EXPECT_EQ(error_of([&] { picard_glue(p); }), ErrorKind::ParamOutOfRange);
  p.tol = 1e-8;
  p.max_iter = 0;
  EXPECT_EQ(error_of([&] { picard_glue(p); }), ErrorKind::ParamOutOfRange);
}
