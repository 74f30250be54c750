#pragma once

// Matrix-free Krylov and eigen solvers shared by the elliptic, Maxwell and
// coercivity code. Vectors are Eigen::VectorXd; operators are callables.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "glue/error.hpp"

namespace glue {

using Vector = Eigen::VectorXd;
using LinearOp = std::function<void(const Vector&, Vector&)>;
using Projector = std::function<void(Vector&)>;

struct CgOptions {
  double tol = 1e-10;
  int max_iter = 1000;
  bool trace = false;
};

struct CgResult {
  int iterations = 0;
  double relative_residual = 0.0;
  bool converged = false;
  /// With trace on: the quadratic energy x'Ax/2 - b'x and the relative
  /// residual after every iteration (entry 0 is the initial guess).
  std::vector<double> energy;
  std::vector<double> residuals;
};

/// Jacobi-preconditioned CG for a symmetric positive semidefinite A. When A
/// is singular, `project` must map onto the Euclidean complement of its
/// kernel; it is applied to b and to every residual so round-off cannot
/// drift into the kernel.
inline CgResult pcg(const LinearOp& A, const Vector& diag, Vector b, Vector& x,
                    const CgOptions& opt, const Projector& project = {}) {
  CgResult res;
  const Eigen::Index n = b.size();
  if (x.size() != n) x = Vector::Zero(n);
  if (project) project(b);
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    x.setZero();
    res.converged = true;
    if (opt.trace) {
      res.energy.push_back(0.0);
      res.residuals.push_back(0.0);
    }
    return res;
  }
  Vector inv_diag(n);
  for (Eigen::Index i = 0; i < n; ++i) inv_diag[i] = diag[i] > 0.0 ? 1.0 / diag[i] : 1.0;

  Vector r(n), Ap(n), z(n), p(n);
  auto record = [&] {
    if (!opt.trace) return;
    res.energy.push_back(-0.5 * x.dot(b + r));
    res.residuals.push_back(r.norm() / bnorm);
  };
  // Restart from the true residual whenever the recursive one has converged
  // but the true one has not.
  for (int restart = 0;; ++restart) {
    A(x, Ap);
    r = b - Ap;
    if (project) project(r);
    res.relative_residual = r.norm() / bnorm;
    if (restart == 0) record();
    if (res.relative_residual <= opt.tol || res.iterations >= opt.max_iter || restart > 20)
      break;
    z = inv_diag.cwiseProduct(r);
    p = z;
    double rz = r.dot(z);
    double rel = res.relative_residual;
    while (rel > opt.tol && res.iterations < opt.max_iter) {
      A(p, Ap);
      const double pAp = p.dot(Ap);
      if (!(pAp > 0.0)) break;  // exhausted the range of A
      const double alpha = rz / pAp;
      x += alpha * p;
      r -= alpha * Ap;
      if (project) project(r);
      z = inv_diag.cwiseProduct(r);
      const double rz_new = r.dot(z);
      p = z + (rz_new / rz) * p;
      rz = rz_new;
      ++res.iterations;
      rel = r.norm() / bnorm;
      record();
    }
    if (rel > opt.tol) {
      A(x, Ap);
      r = b - Ap;
      if (project) project(r);
      res.relative_residual = r.norm() / bnorm;
      break;
    }
  }
  res.converged = res.relative_residual <= opt.tol;
  return res;
}

// ---------------------------------------------------------------------------
// Smallest generalized eigenvalue on the complement of a known kernel

struct RayleighOptions {
  int block = 4;
  double tol = 1e-8;
  int max_outer = 300;
  double inner_tol = 1e-12;
  int inner_max = 20000;
  unsigned seed = 12345;
};

struct RayleighResult {
  double lambda = 0.0;
  Vector minimizer;
  double eigen_residual = 0.0;
  int iterations = 0;
  /// <z,Az>/<z,Bz> for each excluded field, before deflation (0 when the
  /// mass of z vanishes, i.e. the 0/0 case).
  std::vector<double> kernel_quotients;
};

/// Approximate solve of A y = b used by the inverse iteration; y holds the
/// initial guess on entry.
using InnerSolve = std::function<void(const Vector&, Vector&)>;

/// Minimizes <x,Ax>/<x,Bx> over the B-orthogonal complement of `kernel`, with
/// B diagonal. Block inverse iteration with Rayleigh-Ritz; the inner solves
/// are projected CG unless `inner` is given. `kernel` must contain the null
/// space of A.
inline RayleighResult rayleigh_minimize(const LinearOp& A, const Vector& A_diag,
                                        const Vector& B_diag,
                                        const std::vector<Vector>& kernel,
                                        const RayleighOptions& opt = {},
                                        const InnerSolve& inner = {}) {
  const Eigen::Index n = B_diag.size();
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(B_diag[i] > 0.0))
      fail(ErrorKind::DegenerateMass, "mass form vanishes on a coordinate direction",
           static_cast<double>(i));
  RayleighResult out;
  Vector tmp(n);
  for (const auto& z : kernel) {
    A(z, tmp);
    const double num = z.dot(tmp);
    const double den = z.dot(B_diag.cwiseProduct(z));
    out.kernel_quotients.push_back(den > 0.0 ? num / den : 0.0);
  }

  auto bdot = [&](const Vector& a, const Vector& b) { return a.dot(B_diag.cwiseProduct(b)); };

  // B-orthonormal kernel basis (for deflation) and Euclidean-orthonormal one
  // (for the range projection of the inner solves).
  std::vector<Vector> zb, ze;
  for (const auto& z : kernel) {
    Vector v = z, w = z;
    for (const auto& q : zb) v -= bdot(q, v) * q;
    for (const auto& q : ze) w -= q.dot(w) * q;
    const double nb = std::sqrt(bdot(v, v));
    const double ne = w.norm();
    if (nb > 1e-12 * std::sqrt(bdot(z, z))) zb.push_back(v / nb);
    if (ne > 1e-12 * z.norm()) ze.push_back(w / ne);
  }
  auto deflate = [&](Vector& v) {
    for (const auto& q : zb) v -= bdot(q, v) * q;
  };
  Projector range = [&](Vector& v) {
    for (const auto& q : ze) v -= q.dot(v) * q;
  };

  const int k = std::max(1, std::min<int>(opt.block, static_cast<int>(n - zb.size())));
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> N01;
  Eigen::MatrixXd X(n, k);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = N01(rng);

  CgOptions cg;
  cg.tol = opt.inner_tol;
  cg.max_iter = opt.inner_max;
  Eigen::MatrixXd Y(n, k), AY(n, k);
  Vector col(n), acol(n);
  double best_res = 1e300;
  for (int it = 0; it < opt.max_outer; ++it) {
    for (int j = 0; j < k; ++j) {
      col = X.col(j);
      deflate(col);
      Vector rhs = B_diag.cwiseProduct(col);
      Vector y = Vector::Zero(n);
      if (it == 0) {
        y = col;  // start from the random block itself
      } else if (inner) {
        // rhs is B times a B-deflated vector, so a shifted solve keeps y
        // B-orthogonal to the kernel without further projection.
        inner(rhs, y);
      } else {
        pcg(A, A_diag, rhs, y, cg, range);
      }
      deflate(y);
      Y.col(j) = y;
    }
    // Rayleigh-Ritz on span(Y).
    for (int j = 0; j < k; ++j) {
      col = Y.col(j);
      A(col, acol);
      AY.col(j) = acol;
    }
    Eigen::MatrixXd Ah = Y.transpose() * AY;
    Eigen::MatrixXd Bh = Y.transpose() * B_diag.asDiagonal() * Y;
    Ah = 0.5 * (Ah + Ah.transpose());
    Bh = 0.5 * (Bh + Bh.transpose());
    // A rank-deficient block makes Bh singular; re-orthonormalize and retry.
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(Ah, Bh);
    if (ges.info() != Eigen::Success) {
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(Y);
      Y = qr.householderQ() * Eigen::MatrixXd::Identity(n, k);
      X = Y;
      continue;
    }
    X = Y * ges.eigenvectors();
    AY = AY * ges.eigenvectors();
    const double lam = ges.eigenvalues()[0];
    Vector x0 = X.col(0);
    const double xn = std::sqrt(bdot(x0, x0));
    Vector resid = AY.col(0) - lam * B_diag.cwiseProduct(x0);
    const double rel = resid.norm() / (std::abs(lam) * B_diag.cwiseProduct(x0).norm() + 1e-300);
    out.iterations = it + 1;
    out.lambda = lam;
    out.minimizer = x0 / xn;
    out.eigen_residual = rel;
    best_res = std::min(best_res, rel);
    if (it > 0 && rel <= opt.tol) return out;
    // Rescale columns to unit B-norm to keep the next solves well scaled.
    for (int j = 0; j < k; ++j) {
      col = X.col(j);
      const double s = std::sqrt(bdot(col, col));
      if (s > 0.0) X.col(j) /= s;
    }
  }
  fail(ErrorKind::NoConvergence, "eigen-iteration did not reach tolerance", best_res);
}

}  // namespace glue
