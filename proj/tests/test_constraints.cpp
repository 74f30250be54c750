#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <random>

#include "glue/constraints.hpp"
#include "glue/diagnostics.hpp"

using namespace glue;

namespace {

using TensorFn = std::function<Mat3(const Vec3&)>;

DomainPtr box3(double h, double half = 1.0) {
  return build_domain(Box{}, h, {{-half, -half, -half}, {half, half, half}}, 3);
}

SymTensorField sample_tensor(const DomainPtr& dom, const TensorFn& f) {
  SymTensorField T(dom);
  for (std::size_t c = 0; c < dom->cell_count(); ++c) store_sym(T, c, f(dom->cell_center(c)));
  return T;
}

CellVectorField sample_covector(const DomainPtr& dom, const std::function<Vec3(const Vec3&)>& f) {
  CellVectorField Y(dom);
  for (std::size_t c = 0; c < dom->cell_count(); ++c) {
    const Vec3 v = f(dom->cell_center(c));
    for (int i = 0; i < dom->dim; ++i) Y(c, i) = v[i];
  }
  return Y;
}

double max_abs(const SymTensorField& T) {
  double m = 0;
  for (double v : T.values) m = std::max(m, std::abs(v));
  return m;
}

double max_abs(const ScalarField& s) {
  double m = 0;
  for (double v : s.values) m = std::max(m, std::abs(v));
  return m;
}

double max_abs(const CellVectorField& s) {
  double m = 0;
  for (double v : s.values) m = std::max(m, std::abs(v));
  return m;
}

Mat3 scaled_identity(double a) {
  Mat3 m{};
  for (int i = 0; i < 3; ++i) m[i][i] = a;
  return m;
}

KidCandidate zero_candidate(const DomainPtr& dom) { return {ScalarField(dom), CellVectorField(dom)}; }

// Spacelike graph t = f(x) in Minkowski space, with
// f = a exp(-|x - c|^2). Its time and space translations are exact KIDs.
struct GraphSlice {
  double a = 0.25;
  Vec3 c{0.1, -0.2, 0.05};

  double f(const Vec3& x) const { return a * std::exp(-dot(x - c, x - c)); }
  Vec3 df(const Vec3& x) const { return (-2.0 * f(x)) * (x - c); }
  Mat3 ddf(const Vec3& x) const {
    const Vec3 y = x - c;
    Mat3 m{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m[i][j] = f(x) * (4.0 * y[i] * y[j] - 2.0 * (i == j));
    return m;
  }
  double W(const Vec3& x) const { return std::sqrt(1.0 - dot(df(x), df(x))); }
  Mat3 g(const Vec3& x) const {
    const Vec3 d = df(x);
    Mat3 m = scaled_identity(1.0);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m[i][j] -= d[i] * d[j];
    return m;
  }
  Mat3 K(const Vec3& x) const {
    Mat3 m = ddf(x);
    const double w = W(x);
    for (auto& row : m)
      for (auto& v : row) v = -v / w;
    return m;
  }
};

// Random smooth scalar function built from a few trigonometric modes.
std::function<double(const Vec3&)> random_smooth(std::mt19937& rng) {
  std::uniform_real_distribution<double> U(-1, 1);
  const double a = U(rng), b = U(rng), c = U(rng), p = 3 * U(rng), q = 3 * U(rng), r = 3 * U(rng),
               s = U(rng);
  return [=](const Vec3& x) { return a * std::sin(p * x[0] + b) + c * std::cos(q * x[1] + r * x[2] + s); };
}

// Random compactly supported bump (1 - |x-c|^2/w^2)^4.
std::function<double(const Vec3&)> random_bump(std::mt19937& rng) {
  std::uniform_real_distribution<double> U(-1, 1);
  const Vec3 c{0.2 * U(rng), 0.2 * U(rng), 0.2 * U(rng)};
  const double amp = U(rng);
  return [=](const Vec3& x) {
    const double t = 1.0 - dot(x - c, x - c) / 0.25;
    return t > 0 ? amp * t * t * t * t : 0.0;
  };
}

struct DualityCase {
  InitialData data;
  SymTensorField h, k;
  KidCandidate xi;
};

DualityCase duality_case(const DomainPtr& dom, unsigned seed, double amplitude) {
  std::mt19937 rng(seed);
  DualityCase dc{{flat_metric(dom), SymTensorField(dom)}, SymTensorField(dom), SymTensorField(dom),
                 zero_candidate(dom)};
  for (int i = 0; i < 3; ++i)
    for (int j = i; j < 3; ++j) {
      auto pg = random_smooth(rng), pk = random_smooth(rng);
      auto bh = random_bump(rng), bk = random_bump(rng);
      for (std::size_t c = 0; c < dom->cell_count(); ++c) {
        const Vec3 x = dom->cell_center(c);
        dc.data.g(c, i, j) += 0.3 * amplitude * pg(x);
        dc.data.K(c, i, j) = amplitude * pk(x);
        dc.h(c, i, j) = bh(x);
        dc.k(c, i, j) = bk(x);
      }
    }
  auto fN = random_smooth(rng), f0 = random_smooth(rng), f1 = random_smooth(rng), f2 = random_smooth(rng);
  for (std::size_t c = 0; c < dom->cell_count(); ++c) {
    const Vec3 x = dom->cell_center(c);
    dc.xi.N[c] = 1.0 + fN(x);
    dc.xi.Y(c, 0) = f0(x);
    dc.xi.Y(c, 1) = f1(x);
    dc.xi.Y(c, 2) = f2(x);
  }
  return dc;
}

double duality_defect(const DualityCase& dc) {
  const auto lin = linearized_constraint(dc.data, dc.h, dc.k);
  const double lhs = pair_constraint(lin, dc.xi, dc.data.g);
  const double rhs = pair_tensors(dc.h, dc.k, adjoint_constraint(dc.data, dc.xi), dc.data.g);
  return std::abs(lhs - rhs) / std::max(std::abs(lhs), std::abs(rhs));
}

// Shell 2 <= r <= 4 with Schwarzschild data.
InitialData schwarzschild_shell(double h, const DomainPtr& dom_out = nullptr, DomainPtr* dom = nullptr) {
  (void)dom_out;
  Annulus a{2.0, 4.0};
  auto d = build_domain(a, h, bounding_box(a, 3, 3 * h), 3);
  if (dom) *dom = d;
  return schwarzschild_data(1.0, 3, d);
}

double observed_order(double coarse, double fine) { return std::log2(coarse / fine); }

}  // namespace

TEST(Curvature, FlatMetricIsFlat) {
  auto dom = box3(0.25);
  auto c = curvature(flat_metric(dom));
  EXPECT_EQ(max_abs(c.Ric), 0.0);
  EXPECT_EQ(max_abs(c.R), 0.0);
}

TEST(Curvature, ConformalMetricIn2D) {
  // g = e^{2f} delta: R = -2 e^{-2f} lap f.
  auto f = [](const Vec3& x) { return 0.3 * std::exp(-(x[0] * x[0] + x[1] * x[1])); };
  auto lap = [&](const Vec3& x) {
    const double r2 = x[0] * x[0] + x[1] * x[1];
    return f(x) * (4 * r2 - 4);
  };
  double err[2];
  int k = 0;
  for (double h : {0.1, 0.05}) {
    auto dom = build_domain(Box{}, h, {{-2, -2, 0}, {2, 2, 0}}, 2);
    SymTensorField g(dom);
    for (std::size_t c = 0; c < dom->cell_count(); ++c) {
      const double e = std::exp(2 * f(dom->cell_center(c)));
      g(c, 0, 0) = g(c, 1, 1) = e;
    }
    auto R = curvature(g).R;
    double e = 0;
    for (std::size_t c = 0; c < dom->cell_count(); ++c) {
      if (!evaluation_cell(*dom, c)) continue;
      const Vec3 x = dom->cell_center(c);
      e = std::max(e, std::abs(R[c] + 2 * std::exp(-2 * f(x)) * lap(x)));
    }
    err[k++] = e;
  }
  EXPECT_LT(err[0], 0.02);
  EXPECT_NEAR(observed_order(err[0], err[1]), 2.0, 0.3);
}

TEST(Curvature, SchwarzschildIsScalarFlatToSecondOrder) {
  double err[2];
  int k = 0;
  for (double h : {0.25, 0.125}) {
    auto d = schwarzschild_shell(h);
    err[k++] = max_abs(curvature(d.g).R);
  }
  EXPECT_LT(err[0], 0.01);
  EXPECT_NEAR(observed_order(err[0], err[1]), 2.0, 0.3);
}

TEST(Curvature, RejectsIndefiniteMetric) {
  auto dom = box3(0.5);
  auto g = flat_metric(dom);
  g(7, 1, 1) = -1.0;
  try {
    curvature(g);
    FAIL();
  } catch (const GlueError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MetricNotPositive);
  }
}

TEST(ConstraintMap, FlatVacuumIsZero) {
  auto dom = box3(0.25);
  auto cv = constraint_map({flat_metric(dom), SymTensorField(dom)});
  EXPECT_EQ(max_abs(cv.scalar_part), 0.0);
  EXPECT_EQ(max_abs(cv.vector_part), 0.0);
}

TEST(ConstraintMap, PureTraceExtrinsicCurvature) {
  const double c = 0.7;
  auto dom = box3(0.25);
  auto g = flat_metric(dom);
  auto K = sample_tensor(dom, [&](const Vec3&) { return scaled_identity(c); });
  auto cv = constraint_map({g, K});
  for (std::size_t i = 0; i < dom->cell_count(); ++i) {
    if (!evaluation_cell(*dom, i)) continue;
    EXPECT_NEAR(cv.scalar_part[i], 6 * c * c, 1e-13);
  }
  EXPECT_EQ(max_abs(cv.vector_part), 0.0);
  // Lambda enters as -2 Lambda.
  auto cl = constraint_map({g, K, 0.5});
  EXPECT_NEAR(cl.scalar_part[dom->cell_index(Index3{4, 4, 4})], 6 * c * c - 1.0, 1e-13);
}

TEST(ConstraintMap, SchwarzschildIsVacuumToSecondOrder) {
  double err[2];
  int k = 0;
  for (double h : {0.25, 0.125}) {
    auto d = schwarzschild_shell(h);
    auto cv = constraint_map(d);
    EXPECT_EQ(max_abs(cv.vector_part), 0.0);
    err[k++] = max_abs(cv.scalar_part);
  }
  EXPECT_NEAR(observed_order(err[0], err[1]), 2.0, 0.3);
}

TEST(ConstraintMap, GraphInMinkowskiIsVacuum) {
  GraphSlice s;
  double err[2];
  int k = 0;
  for (double h : {0.1, 0.05}) {
    auto dom = box3(h, 1.5);
    auto cv = constraint_map({sample_tensor(dom, [&](const Vec3& x) { return s.g(x); }),
                              sample_tensor(dom, [&](const Vec3& x) { return s.K(x); })});
    err[k++] = std::max(max_abs(cv.scalar_part), max_abs(cv.vector_part));
  }
  EXPECT_LT(err[0], 0.1);
  EXPECT_NEAR(observed_order(err[0], err[1]), 2.0, 0.3);
}

TEST(ConstraintMap, AxisPermutationEquivariance) {
  // Permuting the axes of the inputs permutes the outputs.
  const double h = 0.125;
  auto dom = box3(h);
  auto gfun = [](const Vec3& x) {
    Mat3 m = scaled_identity(1.0 + 0.1 * std::sin(x[0] + 2 * x[1]));
    m[0][1] = m[1][0] = 0.05 * std::cos(x[2]);
    m[0][2] = m[2][0] = 0.03 * x[1];
    return m;
  };
  auto kfun = [](const Vec3& x) {
    Mat3 m{};
    m[0][0] = 0.2 * x[2];
    m[1][2] = m[2][1] = 0.1 * std::sin(x[0]);
    return m;
  };
  // sigma: (x0, x1, x2) -> (x1, x2, x0), so T'(x)_{ij} = T(sx)_{s(i) s(j)}.
  const int s[3] = {1, 2, 0};
  auto perm_point = [&](const Vec3& x) { return Vec3{x[2], x[0], x[1]}; };  // inverse map
  auto permute = [&](const TensorFn& T) {
    return [=](const Vec3& x) {
      const Mat3 t = T(perm_point(x));
      Mat3 m{};
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m[i][j] = t[s[i]][s[j]];
      return m;
    };
  };
  auto cv = constraint_map({sample_tensor(dom, gfun), sample_tensor(dom, kfun)});
  auto cp = constraint_map({sample_tensor(dom, permute(gfun)), sample_tensor(dom, permute(kfun))});
  const int n = dom->n[0];
  for (int k = 1; k < n - 1; ++k)
    for (int j = 1; j < n - 1; ++j)
      for (int i = 1; i < n - 1; ++i) {
        // cell (i, j, k) of the permuted data sits over cell (k, i, j) of the original.
        const std::size_t a = dom->cell_index(Index3{i, j, k});
        const std::size_t b = dom->cell_index(Index3{k, i, j});
        EXPECT_NEAR(cp.scalar_part[a], cv.scalar_part[b], 1e-12);
        for (int q = 0; q < 3; ++q) EXPECT_NEAR(cp.vector_part(a, q), cv.vector_part(b, s[q]), 1e-12);
      }
}

TEST(Adjoint, ConstantAndAffineLapseOnFlatSpace) {
  auto dom = box3(0.25);
  InitialData d{flat_metric(dom), SymTensorField(dom)};
  for (auto N : {std::function<double(const Vec3&)>([](const Vec3&) { return 1.0; }),
                 std::function<double(const Vec3&)>([](const Vec3& x) { return x[0]; })}) {
    KidCandidate xi{sample_cells(dom, N), CellVectorField(dom)};
    auto P = adjoint_constraint(d, xi);
    EXPECT_LE(max_abs(P.first), 1e-12);
    EXPECT_LE(max_abs(P.second), 1e-12);
  }
}

TEST(Adjoint, DualityIsExactAtFlatData) {
  auto dom = box3(2.0 / 32);
  for (unsigned seed : {1u, 2u, 3u}) EXPECT_LE(duality_defect(duality_case(dom, seed, 0.0)), 1e-8);
}

TEST(Adjoint, DualityDefectIsSecondOrderOnCurvedData) {
  double d16 = duality_defect(duality_case(box3(2.0 / 16), 11, 0.1));
  double d32 = duality_defect(duality_case(box3(2.0 / 32), 11, 0.1));
  EXPECT_LT(d32, 0.05);
  EXPECT_NEAR(observed_order(d16, d32), 2.0, 0.5);
}

TEST(Adjoint, AnnihilatesMinkowskiTranslationsOnAGraph) {
  // Every term of the adjoint is exercised: the data have curvature and K.
  GraphSlice s;
  double err[2];
  int k = 0;
  for (double h : {0.1, 0.05}) {
    auto dom = box3(h, 1.5);
    InitialData d{sample_tensor(dom, [&](const Vec3& x) { return s.g(x); }),
                  sample_tensor(dom, [&](const Vec3& x) { return s.K(x); })};
    // Time translation: N = 1/W, Y = -df; x-translation: N = -f_x / W, Y = dx.
    KidCandidate t{sample_cells(dom, [&](const Vec3& x) { return 1.0 / s.W(x); }),
                   sample_covector(dom, [&](const Vec3& x) { return (-1.0) * s.df(x); })};
    KidCandidate X{sample_cells(dom, [&](const Vec3& x) { return -s.df(x)[0] / s.W(x); }),
                   sample_covector(dom, [](const Vec3&) { return Vec3{1, 0, 0}; })};
    double e = 0;
    for (const auto& xi : {t, X}) {
      auto P = adjoint_constraint(d, xi);
      e = std::max({e, max_abs(P.first), max_abs(P.second)});
      auto r = kid_residual(d, xi);
      e = std::max({e, max_abs(r.res_Y), max_abs(r.res_N)});
    }
    err[k++] = e;
  }
  EXPECT_LT(err[0], 0.05);
  EXPECT_NEAR(observed_order(err[0], err[1]), 2.0, 0.3);
}

TEST(Killing, FlatExamples) {
  auto dom = box3(0.25);
  auto g = flat_metric(dom);
  auto S0 = killing_operator(g, sample_covector(dom, [](const Vec3&) { return Vec3{1, -2, 3}; }));
  EXPECT_EQ(max_abs(S0), 0.0);
  auto S1 = killing_operator(g, sample_covector(dom, [](const Vec3& x) { return Vec3{-x[1], x[0], 0}; }));
  EXPECT_LE(max_abs(S1), 1e-12);
  auto S2 = killing_operator(g, sample_covector(dom, [](const Vec3& x) { return Vec3{x[0], 0, 0}; }));
  for (std::size_t c = 0; c < dom->cell_count(); ++c) {
    if (!evaluation_cell(*dom, c)) continue;
    EXPECT_NEAR(S2(c, 0, 0), 1.0, 1e-12);
    EXPECT_EQ(S2(c, 0, 1), 0.0);
    EXPECT_EQ(S2(c, 1, 1), 0.0);
    EXPECT_EQ(S2(c, 2, 2), 0.0);
  }
}

TEST(Kids, FlatKernelHasFullDimension) {
  auto dom = box3(0.25);
  InitialData d{flat_metric(dom), SymTensorField(dom)};
  int count = 0;
  auto check = [&](const KidCandidate& xi) {
    auto r = kid_residual(d, xi);
    EXPECT_LE(r.norm_Y, 1e-10);
    EXPECT_LE(r.norm_N, 1e-10);
    ++count;
  };
  check({ScalarField(dom, 1.0), CellVectorField(dom)});
  for (int i = 0; i < 3; ++i)
    check({sample_cells(dom, [i](const Vec3& x) { return x[i]; }), CellVectorField(dom)});
  for (int i = 0; i < 3; ++i)
    check({ScalarField(dom), sample_covector(dom, [i](const Vec3&) {
             Vec3 e{};
             e[i] = 1;
             return e;
           })});
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j)
      check({ScalarField(dom), sample_covector(dom, [i, j](const Vec3& x) {
               Vec3 y{};
               y[i] = -x[j];
               y[j] = x[i];
               return y;
             })});
  EXPECT_EQ(count, 4 + 3 + 3);
}

TEST(Kids, QuadraticLapseResidual) {
  const double h = 0.25;
  auto dom = box3(h);
  InitialData d{flat_metric(dom), SymTensorField(dom)};
  auto r = kid_residual(d, {sample_cells(dom, [](const Vec3& x) { return dot(x, x); }), CellVectorField(dom)});
  double volume = 0;
  for (std::size_t c = 0; c < dom->cell_count(); ++c) {
    if (!evaluation_cell(*dom, c)) continue;
    volume += dom->cell_volume();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) EXPECT_NEAR(r.res_N(c, i, j), i == j ? 2.0 : 0.0, 1e-12);
  }
  EXPECT_NEAR(r.norm_N, 2 * std::sqrt(3.0) * std::sqrt(volume), 1e-10);
  EXPECT_EQ(r.norm_Y, 0.0);
}

TEST(Kids, SchwarzschildStaticLapseConverges) {
  double res[2];
  int k = 0;
  for (double h : {0.25, 0.125}) {
    DomainPtr dom;
    auto d = schwarzschild_shell(h, nullptr, &dom);
    auto N = sample_cells(dom, [](const Vec3& x) {
      const double q = 0.5 / norm(x);
      return (1 - q) / (1 + q);
    });
    res[k++] = kid_residual(d, {N, CellVectorField(dom)}).norm_N;
  }
  EXPECT_LT(res[0], 0.05);
  EXPECT_NEAR(observed_order(res[0], res[1]), 2.0, 0.3);
}

TEST(EnergyCondition, FlatAndPureTrace) {
  auto dom = box3(0.25);
  auto g = flat_metric(dom);
  auto vac = energy_condition(constraint_map({g, SymTensorField(dom)}), g);
  EXPECT_TRUE(vac.holds);
  EXPECT_EQ(max_abs(vac.margin), 0.0);
  const double c = 0.4;
  auto K = sample_tensor(dom, [&](const Vec3&) { return scaled_identity(c); });
  auto ec = energy_condition(constraint_map({g, K}), g);
  EXPECT_TRUE(ec.holds);
  for (std::size_t i = 0; i < dom->cell_count(); ++i)
    if (evaluation_cell(*dom, i)) EXPECT_NEAR(ec.margin[i], 3 * c * c, 1e-13);
}

TEST(EnergyCondition, MatchesBruteForceScan) {
  auto dom = box3(0.2);
  std::mt19937 rng(5);
  for (int trial = 0; trial < 4; ++trial) {
    auto dc = duality_case(dom, 100 + trial, 0.3);
    auto cv = constraint_map(dc.data);
    auto ec = energy_condition(cv, dc.data.g);
    bool holds = true;
    for (std::size_t c = 0; c < dom->cell_count(); ++c) {
      if (!evaluation_cell(*dom, c)) continue;
      // Independent recomputation: |J|_g^2 = J^T g^{-1} J via a linear solve.
      Eigen::Matrix3d G;
      Eigen::Vector3d J;
      for (int i = 0; i < 3; ++i) {
        J[i] = -0.5 * cv.vector_part(c, i);
        for (int j = 0; j < 3; ++j) G(i, j) = dc.data.g(c, i, j);
      }
      const double margin = 0.5 * cv.scalar_part[c] - std::sqrt(J.dot(G.ldlt().solve(J)));
      EXPECT_NEAR(ec.margin[c], margin, 1e-10 * (1 + std::abs(margin)));
      if (margin < -1e-10) holds = false;
    }
    EXPECT_EQ(ec.holds, holds);
  }
}
