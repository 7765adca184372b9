#pragma once

// SDRE feedback by series expansion in the LPV parameter:
//
//   P(rho) ~ sum_{|alpha| <= p} rho^alpha P_alpha,
//   u = -(1/gamma) B^T P(rho) v,
//
// where the input weight gamma enters as B -> B / sqrt(gamma) in every
// equation. P_0 solves the Riccati equation at rho = 0; each higher
// coefficient solves a Lyapunov equation with the LQR closed-loop matrix
// and a right-hand side collected by matching powers of rho.
//
// Systems with a mass matrix M are handled in explicit form
// v' = M^{-1} A v + M^{-1} B u.

#include <algorithm>
#include <compare>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "pae/autoencoder.hpp"
#include "pae/common.hpp"
#include "pae/json_io.hpp"
#include "pae/lpv_expansion.hpp"
#include "pae/matrix_equations.hpp"
#include "pae/sdc_model.hpp"

namespace pae {

// --- multiindices --------------------------------------------------------------

struct MultiIndex {
  std::vector<int> exponents;

  MultiIndex() = default;
  explicit MultiIndex(std::vector<int> e) : exponents(std::move(e)) {}

  static MultiIndex unit(Index r, Index i) {
    std::vector<int> e(static_cast<std::size_t>(r), 0);
    e[static_cast<std::size_t>(i)] = 1;
    return MultiIndex(std::move(e));
  }

  Index size() const { return static_cast<Index>(exponents.size()); }
  int degree() const { return std::accumulate(exponents.begin(), exponents.end(), 0); }

  /// rho^alpha = prod_i rho_i^alpha_i
  double monomial(const Vector& rho) const {
    double out = 1.0;
    for (std::size_t i = 0; i < exponents.size(); ++i)
      for (int k = 0; k < exponents[i]; ++k) out *= rho(static_cast<Index>(i));
    return out;
  }

  std::string to_string() const {
    std::string s = "(";
    for (std::size_t i = 0; i < exponents.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(exponents[i]);
    }
    return s + ")";
  }

  bool operator==(const MultiIndex&) const = default;

  /// Graded lexicographic order: by degree, then rho_1 > rho_2 > ... (so
  /// e_1 precedes e_2 and 2e_1 precedes e_1 + e_2).
  std::strong_ordering operator<=>(const MultiIndex& o) const {
    if (auto c = degree() <=> o.degree(); c != 0) return c;
    // larger leading exponent comes first
    return o.exponents <=> exponents;
  }
};

/// All alpha in N^r with |alpha| <= p in graded lexicographic order; degree
/// k contributes binom(r + k - 1, k) entries.
inline std::vector<MultiIndex> enumerate_multiindices(Index r, int p) {
  if (r < 1) throw ConfigError("enumerate_multiindices: r must be positive");
  if (p < 0) throw ConfigError("enumerate_multiindices: p must be nonnegative");
  std::vector<MultiIndex> out;
  std::vector<int> e(static_cast<std::size_t>(r), 0);
  for (int k = 0; k <= p; ++k) {
    // distribute k over positions, leading positions taking the most first
    auto fill = [&](auto&& self, std::size_t pos, int left) -> void {
      if (pos + 1 == e.size()) {
        e[pos] = left;
        out.emplace_back(e);
        return;
      }
      for (int take = left; take >= 0; --take) {
        e[pos] = take;
        self(self, pos + 1, left - take);
      }
      e[pos] = 0;
    };
    fill(fill, 0, k);
  }
  return out;
}

inline std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  std::uint64_t out = 1;
  for (std::uint64_t i = 1; i <= k; ++i) out = out * (n - k + i) / i;
  return out;
}

/// sum_{k=0}^{p} binom(r + k - 1, k)
inline std::uint64_t expansion_size(Index r, int p) {
  std::uint64_t total = 0;
  for (int k = 0; k <= p; ++k)
    total += binomial(static_cast<std::uint64_t>(r + k - 1), static_cast<std::uint64_t>(k));
  return total;
}

// --- coefficient synthesis -----------------------------------------------------------

struct FeedbackExpansion {
  int order = 0;
  double gamma = 1.0;
  std::vector<MultiIndex> indices;
  /// May be empty when loaded from a gains-only file.
  std::vector<Matrix> p;
  /// K_alpha = B^T P_alpha with the explicit-form (unweighted) B.
  std::vector<Matrix> k;

  Index r() const { return indices.empty() ? 0 : indices.front().size(); }
  std::size_t size() const { return indices.size(); }

  /// sum_alpha rho^alpha K_alpha
  Matrix gain(const Vector& rho) const {
    require_dims(rho.size() == r(), "FeedbackExpansion::gain: rho has size " + std::to_string(rho.size()));
    Matrix out = Matrix::Zero(k.front().rows(), k.front().cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const double w = indices[i].monomial(rho);
      if (w != 0.0) out += w * k[i];
    }
    return out;
  }

  /// sum_alpha rho^alpha P_alpha
  Matrix riccati_solution(const Vector& rho) const {
    require_dims(!p.empty(), "FeedbackExpansion: coefficients P_alpha were not stored");
    Matrix out = Matrix::Zero(p.front().rows(), p.front().cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const double w = indices[i].monomial(rho);
      if (w != 0.0) out += w * p[i];
    }
    return out;
  }
};

/// A solver failure tagged with the multiindex whose equation failed.
class SynthesisError : public NumericalError {
 public:
  SynthesisError(const MultiIndex& alpha, const std::string& what)
      : NumericalError("equation for multiindex " + alpha.to_string() + ": " + what), alpha_(alpha) {}
  const MultiIndex& multiindex() const { return alpha_; }

 private:
  MultiIndex alpha_;
};

/// How the Lyapunov right-hand sides are assembled.
enum class RhsAssembly {
  dense,
  /// From the symmetric low-rank factors Z0 Z0^T = P0, L D L^T = P_e.
  low_rank,
};

/// LPV coefficients and input map in explicit form (mass matrix applied).
struct ExplicitLpv {
  Matrix a0;
  std::vector<Matrix> a;
  Matrix b;
};

inline ExplicitLpv to_explicit_form(const LpvCoefficients& lpv, const Matrix& b) {
  const Index n = lpv.n();
  require_dims(b.rows() == n, "to_explicit_form: B has shape " + shape(b));
  for (const Matrix& aj : lpv.a)
    require_dims(aj.rows() == n && aj.cols() == n, "to_explicit_form: coefficient has shape " + shape(aj));
  ExplicitLpv out;
  if (lpv.mass.size() == 0) {
    out.a0 = lpv.a0;
    out.a = lpv.a;
    out.b = b;
    return out;
  }
  require_dims(lpv.mass.rows() == n && lpv.mass.cols() == n, "to_explicit_form: mass has shape " + shape(lpv.mass));
  Eigen::LLT<Matrix> llt(lpv.mass);
  if (llt.info() != Eigen::Success) throw NumericalError("to_explicit_form: mass matrix is not positive definite");
  out.a0 = llt.solve(lpv.a0);
  for (const Matrix& aj : lpv.a) out.a.push_back(llt.solve(aj));
  out.b = llt.solve(b);
  return out;
}

/// Number of matrix equations solved for an expansion of order p in r
/// parameters (one Riccati, the rest Lyapunov).
inline std::uint64_t equation_count(Index r, int p) { return expansion_size(r, p); }

/// Coefficients {P_alpha, K_alpha}, |alpha| <= p <= 2.
///
/// Second order: for alpha* = beta + delta the right-hand side collects the
/// ordered pairs (beta, delta) with that sum. For alpha* = 2 e_i there is a
/// single ordered pair, so the cross terms enter once:
///   P_i A_i + A_i^T P_i - P_i G P_i,
/// whereas alpha* = e_i + e_j (i != j) takes both orderings. The second-order
/// LPV coefficient A_{alpha*} is zero for polytopic decoders and is not
/// passed in.
inline FeedbackExpansion compute_expansion_coefficients(const LpvCoefficients& lpv, const Matrix& b, const Matrix& c,
                                                        double gamma, int order,
                                                        RhsAssembly assembly = RhsAssembly::dense) {
  if (order < 0 || order > 2) throw ConfigError("compute_expansion_coefficients: order must be 0, 1 or 2");
  if (!(gamma > 0.0)) throw ConfigError("compute_expansion_coefficients: gamma must be positive");
  require_dims(c.cols() == lpv.n(), "compute_expansion_coefficients: C has shape " + shape(c));
  const ExplicitLpv ex = to_explicit_form(lpv, b);
  const Index n = lpv.n();
  const Index r = std::max<Index>(lpv.r(), 1);
  const Matrix bg = ex.b / std::sqrt(gamma);
  const Matrix g = bg * bg.transpose();

  FeedbackExpansion out;
  out.order = order;
  out.gamma = gamma;
  out.indices = enumerate_multiindices(r, order);
  if (lpv.r() == 0 && order > 0) throw ConfigError("compute_expansion_coefficients: no LPV coefficients for p > 0");

  std::map<MultiIndex, std::size_t> slot;
  for (std::size_t i = 0; i < out.indices.size(); ++i) slot[out.indices[i]] = i;
  out.p.assign(out.indices.size(), Matrix());

  const MultiIndex zero(std::vector<int>(static_cast<std::size_t>(r), 0));
  try {
    out.p[0] = solve_care(ex.a0, bg, c);
  } catch (const NumericalError& e) {
    throw SynthesisError(zero, e.what());
  }
  const Matrix& p0 = out.p[0];
  const Matrix acl = ex.a0 - g * p0;

  const Matrix z0 = assembly == RhsAssembly::low_rank ? psd_factor(p0) : Matrix();
  std::vector<LdlFactorization> first_factors;

  // order 1:  acl^T P_j + P_j acl = -(A_j^T P0 + P0 A_j)
  if (order >= 1) {
    for (Index j = 0; j < r; ++j) {
      const MultiIndex alpha = MultiIndex::unit(r, j);
      const Matrix& aj = ex.a[static_cast<std::size_t>(j)];
      Matrix q;
      if (assembly == RhsAssembly::low_rank)
        q = -build_ldl_rhs_order1(z0, aj).product();
      else
        q = aj.transpose() * p0 + p0 * aj;
      try {
        out.p[slot.at(alpha)] = solve_lyapunov(acl, q);
      } catch (const NumericalError& e) {
        throw SynthesisError(alpha, e.what());
      }
      if (assembly == RhsAssembly::low_rank) first_factors.push_back(symmetric_ldl(out.p[slot.at(alpha)]));
    }
  }

  // order 2
  if (order >= 2) {
    const Matrix zero_n = Matrix::Zero(n, n);
    for (const MultiIndex& alpha : out.indices) {
      if (alpha.degree() != 2) continue;
      std::vector<Index> parts;
      for (Index i = 0; i < r; ++i)
        for (int k = 0; k < alpha.exponents[static_cast<std::size_t>(i)]; ++k) parts.push_back(i);
      const Index bi = parts[0];
      const Index di = parts[1];
      const Matrix& pb = out.p[slot.at(MultiIndex::unit(r, bi))];
      const Matrix& pd = out.p[slot.at(MultiIndex::unit(r, di))];
      const Matrix& ab = ex.a[static_cast<std::size_t>(bi)];
      const Matrix& ad = ex.a[static_cast<std::size_t>(di)];

      Matrix q;
      if (assembly == RhsAssembly::low_rank) {
        auto factor = [&](Index idx, const Matrix& pe, const Matrix& ae) {
          const LdlFactorization& f = first_factors[static_cast<std::size_t>(idx)];
          return FirstOrderFactor{f.l, f.d, bg.transpose() * pe, ae};
        };
        std::optional<FirstOrderFactor> delta;
        if (bi != di) delta = factor(di, pd, ad);
        q = -build_ldl_rhs_order2(z0, zero_n, bg, factor(bi, pb, ab), delta).product();
      } else {
        q = pb * ad + ad.transpose() * pb - pb * g * pd;
        if (bi != di) q += pd * ab + ab.transpose() * pd - pd * g * pb;
      }
      try {
        out.p[slot.at(alpha)] = solve_lyapunov(acl, symmetrized(q));
      } catch (const NumericalError& e) {
        throw SynthesisError(alpha, e.what());
      }
    }
  }

  for (const Matrix& pa : out.p) out.k.push_back(ex.b.transpose() * pa);
  return out;
}

/// u = -(1/gamma) sum_alpha rho^alpha K_alpha v
inline Vector expanded_feedback(const FeedbackExpansion& exp, const Vector& rho, const Vector& v) {
  require_dims(!exp.k.empty() && v.size() == exp.k.front().cols(), "expanded_feedback: state has wrong size");
  return -(1.0 / exp.gamma) * (exp.gain(rho) * v);
}

/// Frobenius residual of the (weighted) Riccati equation at rho for the
/// truncated expansions A(rho) = A0 + sum rho_j A_j and P(rho).
inline double expansion_residual(const FeedbackExpansion& exp, const LpvCoefficients& lpv, const Matrix& b,
                                 const Matrix& c, double gamma, const Vector& rho) {
  const ExplicitLpv ex = to_explicit_form(lpv, b);
  Matrix a = ex.a0;
  for (Index j = 0; j < rho.size(); ++j) a += rho(j) * ex.a[static_cast<std::size_t>(j)];
  return riccati_residual(exp.riccati_solution(rho), a, ex.b / std::sqrt(gamma), c);
}

/// -(1/gamma) B_M^T P v with P the stabilizing solution for the coefficient
/// A (M-form) and B_M = M^{-1} B.
inline Vector sdre_feedback_for_coefficient(const Matrix& a, const Matrix& mass, const Matrix& b, const Matrix& c,
                                            double gamma, const Vector& v) {
  LpvCoefficients single;
  single.a0 = a;
  single.mass = mass;
  const ExplicitLpv ex = to_explicit_form(single, b);
  const Matrix p = solve_care(ex.a0, ex.b / std::sqrt(gamma), c);
  return -(1.0 / gamma) * (ex.b.transpose() * (p * v));
}

/// Exact SDRE feedback of the LPV approximation: encode v, build
/// A~(decode(rho)) without truncation and solve the Riccati equation there.
inline Vector exact_sdre_feedback(const QuadraticSdcSystem& sys, const PolytopicAutoencoder& model, const Vector& v,
                                  double gamma) {
  const Encoding enc = encode(model, v);
  try {
    return sdre_feedback_for_coefficient(evaluate_lpv_matrix(sys, model, enc.rho), sys.mass, sys.b, sys.c, gamma, v);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("exact SDRE feedback at state with M-norm ") +
                         std::to_string(m_norm(sys, v)) + ": " + e.what());
  }
}

/// SDRE feedback with the true state-dependent coefficient A~(v).
inline Vector true_sdre_feedback(const QuadraticSdcSystem& sys, const Vector& v, double gamma) {
  try {
    return sdre_feedback_for_coefficient(evaluate_coefficient(sys, v), sys.mass, sys.b, sys.c, gamma, v);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("SDRE feedback at state with M-norm ") + std::to_string(m_norm(sys, v)) +
                         ": " + e.what());
  }
}

// --- serialization -------------------------------------------------------------------

inline Json expansion_to_json(const FeedbackExpansion& exp, bool with_p = false) {
  Json j;
  j["order"] = exp.order;
  j["gamma"] = exp.gamma;
  j["multiindices"] = Json::array();
  for (const MultiIndex& a : exp.indices) j["multiindices"].push_back(a.exponents);
  j["K"] = Json::array();
  for (const Matrix& k : exp.k) j["K"].push_back(matrix_to_json(k));
  if (with_p) {
    j["P"] = Json::array();
    for (const Matrix& p : exp.p) j["P"].push_back(matrix_to_json(p));
  }
  return j;
}

inline FeedbackExpansion expansion_from_json(const Json& j) {
  FeedbackExpansion exp;
  try {
    exp.order = j.at("order").get<int>();
    exp.gamma = j.at("gamma").get<double>();
    for (const Json& a : j.at("multiindices")) exp.indices.emplace_back(a.get<std::vector<int>>());
    for (const Json& k : j.at("K")) exp.k.push_back(matrix_from_json(k));
    if (j.contains("P"))
      for (const Json& p : j.at("P")) exp.p.push_back(matrix_from_json(p));
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("expansion JSON: ") + e.what());
  }
  require_dims(exp.k.size() == exp.indices.size() && (exp.p.empty() || exp.p.size() == exp.indices.size()),
               "expansion JSON: coefficient count does not match the multiindex list");
  return exp;
}

}  // namespace pae
