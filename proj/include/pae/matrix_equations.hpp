#pragma once

// Dense Lyapunov and Riccati solvers plus the indefinite LDL^T factorizations
// of the first- and second-order expansion right-hand sides.
//
// Sign convention: solve_lyapunov(F, Q) returns P with F^T P + P F = -Q.
// A Lyapunov equation written as F^T P + P F = R is therefore solved as
// solve_lyapunov(F, -R).

#include <algorithm>
#include <complex>
#include <cstdio>
#include <optional>
#include <string>

#include "pae/common.hpp"

namespace pae {

using CMatrix = Eigen::MatrixXcd;

namespace detail {

inline std::string sci(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", x);
  return buf;
}

}  // namespace detail

/// Solves F^T P + P F = -Q by complex Schur back-substitution.
///
/// With F = U T U^H the equation becomes T^H Y + Y T = -U^H Q U for
/// Y = U^H P U, which is solved column by column with lower triangular
/// systems (T^H + t_jj I) y_j = ... . Throws NumericalError when F and -F
/// share an eigenvalue (solution not unique) or the result fails the
/// residual bound ||F^T P + P F + Q|| <= 1e-10 (||F|| ||P|| + ||Q||).
inline Matrix solve_lyapunov(const Matrix& f, const Matrix& q) {
  const Index n = f.rows();
  require_dims(f.cols() == n, "solve_lyapunov: F must be square, got " + shape(f));
  require_dims(q.rows() == n && q.cols() == n, "solve_lyapunov: Q has shape " + shape(q));
  if (n == 0) return Matrix(0, 0);
  if (!f.allFinite() || !q.allFinite()) throw NumericalError("solve_lyapunov: non-finite input");

  Eigen::ComplexSchur<CMatrix> schur(f.cast<std::complex<double>>());
  if (schur.info() != Eigen::Success) throw NumericalError("solve_lyapunov: Schur decomposition failed");
  const CMatrix& t = schur.matrixT();
  const CMatrix& u = schur.matrixU();

  const CMatrix qt = u.adjoint() * q.cast<std::complex<double>>() * u;
  const CMatrix th = t.adjoint();
  const double fnorm = f.norm();
  const double sep_tol = 1e3 * std::numeric_limits<double>::epsilon() * std::max(fnorm, 1e-300);

  CMatrix y(n, n);
  CMatrix shifted = th;
  for (Index j = 0; j < n; ++j) {
    Eigen::VectorXcd col = -qt.col(j);
    if (j > 0) col -= y.leftCols(j) * t.col(j).head(j);
    shifted.diagonal() = th.diagonal().array() + t(j, j);
    if (shifted.diagonal().cwiseAbs().minCoeff() <= sep_tol)
      throw NumericalError("solve_lyapunov: F and -F share an eigenvalue; solution is not unique");
    y.col(j) = shifted.triangularView<Eigen::Lower>().solve(col);
  }

  Matrix p = symmetrized((u * y * u.adjoint()).real());
  if (!p.allFinite()) throw NumericalError("solve_lyapunov: non-finite solution");
  const double res = (f.transpose() * p + p * f + q).norm();
  if (const double tol = 1e-10 * (fnorm * p.norm() + q.norm()); res > tol)
    throw NumericalError("solve_lyapunov: residual " + detail::sci(res) + " above tolerance " + detail::sci(tol));
  return p;
}

/// Frobenius norm of A^T P + P A - P B B^T P + C^T C.
inline double riccati_residual(const Matrix& p, const Matrix& a, const Matrix& b, const Matrix& c) {
  const Index n = a.rows();
  require_dims(a.cols() == n && p.rows() == n && p.cols() == n && b.rows() == n && c.cols() == n,
               "riccati_residual: inconsistent shapes");
  const Matrix bp = b.transpose() * p;
  return (a.transpose() * p + p * a - bp.transpose() * bp + c.transpose() * c).norm();
}

namespace detail {

// Exchanges the adjacent diagonal entries k, k+1 of the upper triangular T
// by a unitary rotation, keeping Q T Q^H invariant.
inline void swap_schur_pair(CMatrix& t, CMatrix& q, Index k) {
  using C = std::complex<double>;
  const C t11 = t(k, k);
  const C t22 = t(k + 1, k + 1);
  C x1 = t(k, k + 1);
  C x2 = t22 - t11;
  const double nrm = std::hypot(std::abs(x1), std::abs(x2));
  if (nrm == 0.0) return;
  x1 /= nrm;
  x2 /= nrm;
  // Z = [[x1, -conj(x2)], [x2, conj(x1)]]; its first column is the
  // eigenvector of the 2x2 block for t22.
  const Index cols = t.cols();
  for (Index j = 0; j < cols; ++j) {
    const C a = t(k, j);
    const C b = t(k + 1, j);
    t(k, j) = std::conj(x1) * a + std::conj(x2) * b;
    t(k + 1, j) = -x2 * a + x1 * b;
  }
  for (Index i = 0; i < t.rows(); ++i) {
    const C a = t(i, k);
    const C b = t(i, k + 1);
    t(i, k) = a * x1 + b * x2;
    t(i, k + 1) = -a * std::conj(x2) + b * std::conj(x1);
  }
  for (Index i = 0; i < q.rows(); ++i) {
    const C a = q(i, k);
    const C b = q(i, k + 1);
    q(i, k) = a * x1 + b * x2;
    q(i, k + 1) = -a * std::conj(x2) + b * std::conj(x1);
  }
  t(k + 1, k) = 0.0;
  t(k, k) = t22;
  t(k + 1, k + 1) = t11;
}

// Stabilizing solution from the Hamiltonian's stable invariant subspace.
inline Matrix care_schur(const Matrix& a, const Matrix& g, const Matrix& qc) {
  const Index n = a.rows();
  Matrix ham(2 * n, 2 * n);
  ham << a, -g, -qc, -a.transpose();

  Eigen::ComplexSchur<CMatrix> schur(ham.cast<std::complex<double>>());
  if (schur.info() != Eigen::Success) throw NumericalError("solve_care: Schur decomposition failed");
  CMatrix t = schur.matrixT();
  CMatrix u = schur.matrixU();

  const double axis_tol = 1e-10 * std::max(ham.norm(), 1.0);
  Index stable = 0;
  for (Index i = 0; i < 2 * n; ++i) {
    const double re = t(i, i).real();
    if (std::abs(re) <= axis_tol)
      throw NumericalError("solve_care: Hamiltonian has eigenvalues on the imaginary axis; "
                           "no stabilizing solution");
    if (re < 0.0) {
      for (Index k = i - 1; k >= stable; --k) swap_schur_pair(t, u, k);
      ++stable;
    }
  }
  if (stable != n) throw NumericalError("solve_care: stable subspace has wrong dimension");

  const CMatrix u11 = u.topLeftCorner(n, n);
  const CMatrix u21 = u.bottomLeftCorner(n, n);
  Eigen::FullPivLU<CMatrix> lu(u11);
  if (!lu.isInvertible() || lu.rcond() < 1e-13)
    throw NumericalError("solve_care: stable subspace is not a graph; pair not stabilizable/detectable");
  // P = U21 U11^{-1}  <=>  U11^T P^T = U21^T
  const CMatrix pt = u11.transpose().fullPivLu().solve(u21.transpose());
  return symmetrized(pt.transpose().real());
}

}  // namespace detail

/// Stabilizing solution of A^T P + P A - P B B^T P = -C^T C.
///
/// Computed from the ordered complex Schur form of the Hamiltonian and then
/// polished by Newton-Kleinman steps, each a Lyapunov solve, while the
/// residual keeps decreasing. Throws NumericalError if no stabilizing
/// solution exists or the residual bound cannot be met.
inline Matrix solve_care(const Matrix& a, const Matrix& b, const Matrix& c) {
  const Index n = a.rows();
  require_dims(a.cols() == n, "solve_care: A must be square, got " + shape(a));
  require_dims(b.rows() == n, "solve_care: B has shape " + shape(b));
  require_dims(c.cols() == n, "solve_care: C has shape " + shape(c));
  if (!a.allFinite() || !b.allFinite() || !c.allFinite()) throw NumericalError("solve_care: non-finite input");
  if (n == 0) return Matrix(0, 0);

  const Matrix g = b * b.transpose();
  const Matrix qc = c.transpose() * c;
  Matrix p = detail::care_schur(a, g, qc);
  double res = riccati_residual(p, a, b, c);

  for (int it = 0; it < 10; ++it) {
    const Matrix k = b.transpose() * p;
    const Matrix acl = a - b * k;
    Matrix next;
    try {
      next = solve_lyapunov(acl, qc + k.transpose() * k);
    } catch (const NumericalError&) {
      break;
    }
    const double next_res = riccati_residual(next, a, b, c);
    if (!(next_res < res)) break;
    const double change = (next - p).norm();
    p = std::move(next);
    res = next_res;
    if (change <= 1e-15 * p.norm()) break;
  }

  if (spectral_abscissa(a - g * p) >= 0.0)
    throw NumericalError("solve_care: closed loop A - B B^T P is not Hurwitz");
  // relative to the size of the terms being cancelled
  const double scale = std::max(2.0 * a.norm() * p.norm() + g.norm() * p.squaredNorm() + qc.norm(), 1e-300);
  if (res > 1e-10 * scale)
    throw NumericalError("solve_care: residual " + detail::sci(res) + " above tolerance " + detail::sci(1e-10 * scale));
  return p;
}

// --- low-rank right-hand sides ---------------------------------------------

/// Symmetric indefinite factorization L D L^T.
struct LdlFactorization {
  Matrix l;
  Matrix d;

  Matrix product() const { return l * d * l.transpose(); }
};

namespace detail {

/// J = [[0, I_k], [I_k, 0]]
inline Matrix swap_core(Index k) {
  Matrix j = Matrix::Zero(2 * k, 2 * k);
  j.topRightCorner(k, k).setIdentity();
  j.bottomLeftCorner(k, k).setIdentity();
  return j;
}

}  // namespace detail

/// Right-hand side -(A_a^T P0 + P0 A_a) of the first-order Lyapunov equation
/// for P0 = Z0 Z0^T, as L D L^T with L = [A_a^T Z0, Z0] and D = -J.
inline LdlFactorization build_ldl_rhs_order1(const Matrix& z0, const Matrix& a_alpha) {
  const Index n = z0.rows();
  require_dims(a_alpha.rows() == n && a_alpha.cols() == n,
               "build_ldl_rhs_order1: A_alpha has shape " + shape(a_alpha) + ", Z0 has " + shape(z0));
  const Index k = z0.cols();
  LdlFactorization out;
  out.l.resize(n, 2 * k);
  out.l << a_alpha.transpose() * z0, z0;
  out.d = -detail::swap_core(k);
  return out;
}

/// One first-order ingredient of a second-order right-hand side:
/// P_e = L D L^T, K = B^T P_e and the LPV coefficient A_e.
struct FirstOrderFactor {
  Matrix l;
  Matrix d;
  Matrix k;
  Matrix a;
};

/// Right-hand side of the second-order Lyapunov equation for a multiindex
/// alpha* = beta + delta (|beta| = |delta| = 1),
///
///   R = -P0 A* - A*^T P0 - (P_b A_d + A_d^T P_b + P_d A_b + A_b^T P_d)
///       + P_b B B^T P_d + P_d B B^T P_b,
///
/// as L D L^T with L = [A*^T Z0, Z0, (A_d - B K_d/2)^T L_b,
/// (A_b - B K_b/2)^T L_d, L_b, L_d] and D = -[[J,0,0],[0,0,Dbd],[0,Dbd,0]],
/// Dbd = diag(D_b, D_d). The halved gains split each B B^T cross term
/// evenly between the two blocks that produce it.
///
/// Passing no `delta` means beta = delta (alpha* = 2 e_i). Only the single
/// ordered pair contributes then: R = -P0 A* - A*^T P0 - (P_b A_b + A_b^T P_b
/// - P_b B B^T P_b), and the duplicate columns are dropped.
inline LdlFactorization build_ldl_rhs_order2(const Matrix& z0, const Matrix& a_star, const Matrix& b,
                                             const FirstOrderFactor& beta,
                                             const std::optional<FirstOrderFactor>& delta = std::nullopt) {
  const Index n = z0.rows();
  const Index k0 = z0.cols();
  auto check = [&](const FirstOrderFactor& f, const char* name) {
    require_dims(f.l.rows() == n && f.d.rows() == f.l.cols() && f.d.cols() == f.l.cols(),
                 std::string("build_ldl_rhs_order2: factor/core mismatch for ") + name);
    require_dims(f.k.rows() == b.cols() && f.k.cols() == n,
                 std::string("build_ldl_rhs_order2: gain has wrong shape for ") + name);
    require_dims(f.a.rows() == n && f.a.cols() == n,
                 std::string("build_ldl_rhs_order2: coefficient has wrong shape for ") + name);
  };
  require_dims(a_star.rows() == n && a_star.cols() == n, "build_ldl_rhs_order2: A* has shape " + shape(a_star));
  require_dims(b.rows() == n, "build_ldl_rhs_order2: B has shape " + shape(b));
  check(beta, "beta");
  if (delta) check(*delta, "delta");

  const FirstOrderFactor& other = delta ? *delta : beta;
  const Index kb = beta.l.cols();
  const Index kd = delta ? delta->l.cols() : 0;
  const Index kbd = kb + kd;

  LdlFactorization out;
  out.l.resize(n, 2 * k0 + 2 * kbd);
  out.l.leftCols(k0) = a_star.transpose() * z0;
  out.l.middleCols(k0, k0) = z0;
  Index col = 2 * k0;
  out.l.middleCols(col, kb) = (other.a - 0.5 * b * other.k).transpose() * beta.l;
  col += kb;
  if (delta) {
    out.l.middleCols(col, kd) = (beta.a - 0.5 * b * beta.k).transpose() * delta->l;
    col += kd;
  }
  out.l.middleCols(col, kb) = beta.l;
  col += kb;
  if (delta) out.l.middleCols(col, kd) = delta->l;

  Matrix dbd = Matrix::Zero(kbd, kbd);
  dbd.topLeftCorner(kb, kb) = beta.d;
  if (delta) dbd.bottomRightCorner(kd, kd) = delta->d;

  out.d = Matrix::Zero(out.l.cols(), out.l.cols());
  out.d.topLeftCorner(2 * k0, 2 * k0) = -detail::swap_core(k0);
  out.d.block(2 * k0, 2 * k0 + kbd, kbd, kbd) = -dbd;
  out.d.block(2 * k0 + kbd, 2 * k0, kbd, kbd) = -dbd;
  return out;
}

/// Z with Z Z^T = P for symmetric positive semidefinite P; eigenvalues below
/// `drop_tol` times the largest are discarded.
inline Matrix psd_factor(const Matrix& p, double drop_tol = 1e-14) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(p));
  const Vector& ev = es.eigenvalues();
  const double top = ev.cwiseAbs().maxCoeff();
  Index keep = 0;
  for (Index i = 0; i < ev.size(); ++i)
    if (ev(i) > drop_tol * top) ++keep;
  Matrix z(p.rows(), keep);
  Index col = 0;
  for (Index i = 0; i < ev.size(); ++i)
    if (ev(i) > drop_tol * top) z.col(col++) = es.eigenvectors().col(i) * std::sqrt(ev(i));
  return z;
}

/// L D L^T = P for symmetric P (eigendecomposition, zero modes dropped).
inline LdlFactorization symmetric_ldl(const Matrix& p, double drop_tol = 1e-14) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(p));
  const Vector& ev = es.eigenvalues();
  const double top = ev.size() ? ev.cwiseAbs().maxCoeff() : 0.0;
  std::vector<Index> keep;
  for (Index i = 0; i < ev.size(); ++i)
    if (std::abs(ev(i)) > drop_tol * top) keep.push_back(i);
  LdlFactorization out;
  out.l.resize(p.rows(), static_cast<Index>(keep.size()));
  out.d = Matrix::Zero(out.l.cols(), out.l.cols());
  for (std::size_t c = 0; c < keep.size(); ++c) {
    out.l.col(static_cast<Index>(c)) = es.eigenvectors().col(keep[c]);
    out.d(static_cast<Index>(c), static_cast<Index>(c)) = ev(keep[c]);
  }
  return out;
}

}  // namespace pae
