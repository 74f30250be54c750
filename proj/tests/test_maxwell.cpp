#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "glue/maxwell.hpp"

using namespace glue;

namespace {

constexpr double kPi = std::numbers::pi;

DomainPtr annulus_domain(double h, int dim = 2, double margin = 0.3) {
  Annulus a{1.0, 3.0};
  return build_domain(a, h, bounding_box(a, dim, margin), dim);
}

double max_abs(const ScalarField& s) {
  double m = 0;
  for (double v : s.values) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace

TEST(DiscreteCurl, IsExactlyDivergenceFree) {
  for (int dim : {2, 3}) {
    auto dom = annulus_domain(dim == 2 ? 0.05 : 0.2, dim);
    auto E = discrete_curl(dom, dipole_potential(dim));
    EXPECT_LE(max_abs(discrete_divergence(E)), 1e-12);
    auto B = discrete_curl(dom, bump_potential({0.3, -0.2, 0.1}, 0.7));
    EXPECT_LE(max_abs(discrete_divergence(B)), 1e-12);
  }
}

TEST(RhoChi, EqualFieldsGiveTheirDivergence) {
  auto dom = annulus_domain(0.05);
  auto E = discrete_curl(dom, bump_potential({0, 0, 0}, 1.0));
  auto chi = sample_cutoff_faces(CutoffSpec{}, dom);
  EXPECT_LE(max_abs(assemble_rho_chi(E, E, chi)), max_abs(discrete_divergence(E)) + 1e-13);
}

TEST(RhoChi, ConstantCutoffGivesInputDivergence) {
  auto dom = annulus_domain(0.05);
  auto E1 = discrete_curl(dom, dipole_potential(2));
  auto E2 = discrete_curl(dom, bump_potential({1, 0, 0}, 0.5));
  for (double c : {0.0, 1.0}) {
    VectorField chi(dom);
    for (auto& comp : chi.comp) std::fill(comp.begin(), comp.end(), c);
    EXPECT_LE(max_abs(assemble_rho_chi(E1, E2, chi)), 1e-12);
  }
}

TEST(RhoChi, MatchesClosedFormForUniformField) {
  // E1 = (1, 0), E2 = 0: rho = chi'(r) x1 / r.
  const CutoffSpec cut{0.4, 0.6};
  auto chi_prime = [&](double r) {
    const double t = (r - 1.0) / 2.0;
    const double s = (t - cut.t0) / (cut.t1 - cut.t0);
    if (s <= 0 || s >= 1) return 0.0;
    return -30 * s * s * (1 - s) * (1 - s) / (cut.t1 - cut.t0) / 2.0;
  };
  double err[2];
  int k = 0;
  for (double h : {0.04, 0.02}) {
    auto dom = annulus_domain(h);
    auto E1 = sample_faces(dom, [](const Vec3&) { return Vec3{1, 0, 0}; });
    VectorField E2(dom);
    auto rho = assemble_rho_chi(E1, E2, sample_cutoff_faces(cut, dom));
    double e = 0;
    for (std::size_t c = 0; c < dom->cell_count(); ++c) {
      const Vec3 x = dom->cell_center(c);
      const double r = norm(x);
      e = std::max(e, std::abs(rho[c] - chi_prime(r) * x[0] / r));
    }
    err[k++] = e;
  }
  EXPECT_LT(err[0], 0.05);
  EXPECT_LT(err[1], err[0] / 3.0);
}

TEST(Compatibility, SolenoidalFieldsHaveNoMismatch) {
  auto dom = annulus_domain(0.05);
  auto E1 = discrete_curl(dom, dipole_potential(2));
  auto E2 = discrete_curl(dom, bump_potential({0.5, 0.5, 0}, 1.0));
  EXPECT_NEAR(compatibility_check(E1, E2), 0.0, 1e-3);
}

TEST(Compatibility, MonopoleCarriesItsCharge) {
  auto dom = annulus_domain(0.05);
  auto E1 = monopole_field(dom);
  VectorField E2(dom);
  EXPECT_NEAR(compatibility_check(E1, E2), 2 * kPi, 2 * kPi * 1e-3);
}

TEST(Compatibility, ThreeDimensionalDipoleHasNoNetFlux) {
  auto dom = annulus_domain(0.2, 3);
  auto E1 = sample_faces(dom, [](const Vec3& x) {
    // Field of a point dipole p = e3: (3 (p.x) x - r^2 p) / r^5.
    const double r2 = dot(x, x), r5 = std::pow(r2, 2.5);
    return Vec3{3 * x[2] * x[0] / r5, 3 * x[2] * x[1] / r5, (3 * x[2] * x[2] - r2) / r5};
  });
  VectorField E2(dom);
  EXPECT_NEAR(compatibility_check(E1, E2), 0.0, 1e-2);
}

TEST(Compatibility, StaircaseVersionOnConeShell) {
  ConeShell cs{0.3, 0.6, {0, 0, 1}, {0, 0, 0}, 4.0};
  auto dom = build_domain(cs, 0.125, bounding_box(cs, 3, 0.25), 3);
  auto E = discrete_curl(dom, bump_potential({0, 0, 2}, 1.0));
  EXPECT_NEAR(compatibility_check(E, E), 0.0, 1e-12);
  // Uniform axial field: what enters through the inner cone leaves through
  // the outer cone and the cap, so the mismatch of (E, E) vanishes, and
  // (E, 0) measures the flux through the inner cone alone.
  auto U = sample_faces(dom, [](const Vec3&) { return Vec3{0, 0, 1}; });
  EXPECT_NEAR(compatibility_check(U, U), 0.0, 1e-10);
}

TEST(Glue, IdenticalInputsAreLeftAlone) {
  auto dom = annulus_domain(0.05);
  auto E = discrete_curl(dom, bump_potential({0.2, 0.1, 0}, 1.5));
  GlueProblem p{E, E};
  auto r = glue_fields(p);
  for (double v : r.u.values) EXPECT_NEAR(v, 0.0, 1e-12);
  for (int d = 0; d < 2; ++d)
    for (std::size_t i = 0; i < E.comp[d].size(); ++i)
      EXPECT_NEAR(r.E.comp[d][i], E.comp[d][i], 1e-12);
}

TEST(Glue, ScreensABumpField) {
  auto dom = annulus_domain(0.04);
  auto E1 = discrete_curl(dom, bump_potential({0.4, 0.0, 0}, 1.2));
  VectorField E2(dom);
  GlueProblem p{E1, E2};
  auto r = glue_fields(p);
  EXPECT_LE(r.max_div, 1e-8);
  EXPECT_EQ(r.interface_mismatch, 0.0);
  double inside = 0;
  for (int d = 0; d < 2; ++d) {
    for (std::size_t i = 0; i < r.E.comp[d].size(); ++i) {
      const double rr = norm(dom->face_center(d, dom->face_coords(d, i)));
      if (rr >= 3.0) EXPECT_EQ(r.E.comp[d][i], 0.0);
      if (rr <= 1.0) {
        EXPECT_EQ(r.E.comp[d][i], E1.comp[d][i]);
        inside = std::max(inside, std::abs(r.E.comp[d][i]));
      }
    }
  }
  EXPECT_GT(inside, 0.1);
  // Locality: E differs from E_chi only on interior faces.
  auto Echi = blend(E1, E2, sample_cutoff_faces(p.cutoff, dom));
  for (int d = 0; d < 2; ++d)
    for (std::size_t i = 0; i < r.E.comp[d].size(); ++i)
      if (!dom->face_interior(d, dom->face_coords(d, i)))
        EXPECT_EQ(r.E.comp[d][i], Echi.comp[d][i]);
}

TEST(Glue, DivergenceBoundedBySolverResidual) {
  auto dom = annulus_domain(0.05);
  auto E1 = discrete_curl(dom, dipole_potential(2));
  auto E2 = discrete_curl(dom, bump_potential({-0.5, 0.3, 0}, 0.8));
  for (const WeightSpec& w : {WeightSpec{PowerWeight{}}, WeightSpec{ExponentialWeight{}}}) {
    GlueProblem p{E1, E2, w};
    auto r = glue_fields(p);
    double rho2 = 0;
    for (std::size_t c = 0; c < dom->cell_count(); ++c)
      if (dom->interior[c]) rho2 += r.rho_chi[c] * r.rho_chi[c];
    EXPECT_LE(r.max_div, 10 * p.solver.tol * std::sqrt(rho2) + 1e-13);
  }
}

TEST(Glue, MonopoleCannotBeScreened) {
  auto dom = annulus_domain(0.05);
  GlueProblem p{monopole_field(dom), VectorField(dom)};
  try {
    glue_fields(p);
    FAIL();
  } catch (const GlueError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NetSourceMismatch);
    EXPECT_NEAR(e.value(), 2 * kPi, 0.01 * 2 * kPi);
  }
  p.solver.strict = false;
  auto r = glue_fields(p);
  EXPECT_NEAR(r.report.projection_defect, 2 * kPi, 0.01 * 2 * kPi);
}

TEST(Glue, IndependentInputsStayIndependent) {
  auto dom = annulus_domain(0.08);
  VectorField zero(dom);
  const Vec3 centers[5] = {{0, 0, 0}, {0.3, 0, 0}, {0, 0.4, 0}, {-0.3, -0.2, 0}, {0.2, -0.4, 0}};
  std::vector<std::size_t> rows;
  for (int d = 0; d < 2; ++d)
    for (std::size_t i = 0; i < dom->face_count(d); ++i)
      if (dom->face_interior(d, dom->face_coords(d, i))) rows.push_back(d * dom->face_count(0) + i);
  Eigen::MatrixXd M(rows.size(), 5);
  for (int k = 0; k < 5; ++k) {
    GlueProblem p{discrete_curl(dom, bump_potential(centers[k], 0.5 + 0.1 * k)), zero};
    auto r = glue_fields(p);
    for (std::size_t j = 0; j < rows.size(); ++j) {
      const std::size_t at = rows[j];
      const int d = at >= dom->face_count(0) ? 1 : 0;
      M(j, k) = r.E.comp[d][at - d * dom->face_count(0)];
    }
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
  const auto& s = svd.singularValues();
  EXPECT_GT(s[4] / s[0], 1e-6);
}

TEST(Glue, ConeShellWithConeWeights) {
  ConeShell cs{0.3, 0.6, {0, 0, 1}, {0, 0, 0}, 4.0};
  auto dom = build_domain(cs, 0.2, bounding_box(cs, 3, 0.4), 3);
  // Supported away from the apex and the truncation sphere, where the cone
  // cut-off (a function of angle only) would blend outside the region.
  auto E1 = discrete_curl(dom, compact_bump_potential({0, 0, 2}, 0.8));
  VectorField E2(dom);
  GlueProblem p{E1, E2, ConeWeight{0.25, 2.0}, CutoffSpec{0.3, 0.7}};
  auto r = glue_fields(p);
  EXPECT_LE(r.max_div, 1e-8);
  EXPECT_EQ(r.interface_mismatch, 0.0);
}
