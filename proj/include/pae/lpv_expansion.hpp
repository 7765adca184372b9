#pragma once

// Quasi-LPV coefficient rho -> A(rho) = A~(decode(rho)) of a quadratic SDC
// system under a polytopic decoder, and its truncated expansion
//
//   A(rho) ~ A0 + sum_j rho_j A_j,   A0 = A_lin,   A_j = H(w_j, .),
//
// which is accurate to second order because the clustering network has a
// vanishing Jacobian at rho = 0.

#include <vector>

#include "pae/autoencoder.hpp"
#include "pae/common.hpp"
#include "pae/json_io.hpp"
#include "pae/sdc_model.hpp"

namespace pae {

struct LpvCoefficients {
  Matrix a0;
  std::vector<Matrix> a;
  /// Mass matrix of the source system; empty means identity.
  Matrix mass;

  Index n() const { return a0.rows(); }
  Index r() const { return static_cast<Index>(a.size()); }

  /// A0 + sum_j rho_j A_j
  Matrix evaluate(const Vector& rho) const {
    require_dims(rho.size() == r(), "LpvCoefficients::evaluate: rho has size " + std::to_string(rho.size()));
    Matrix out = a0;
    for (Index j = 0; j < r(); ++j) out += rho(j) * a[static_cast<std::size_t>(j)];
    return out;
  }
};

/// A_j is the state-linear part H(w_j, .) of A~ at the decoder column w_j;
/// A_lin enters once, through A0.
inline LpvCoefficients lpv_coefficients_first_order(const QuadraticSdcSystem& sys, const PolytopicAutoencoder& model) {
  require_dims(model.n == sys.n(), "lpv_coefficients_first_order: model has n = " + std::to_string(model.n) +
                                       ", system has n = " + std::to_string(sys.n()));
  LpvCoefficients out;
  out.a0 = sys.a_lin;
  out.mass = sys.mass;
  for (Index j = 0; j < model.r; ++j) out.a.push_back(sys.h.left_loaded(model.decoder.col(j)));
  return out;
}

/// A~(decode(rho)), no truncation.
inline Matrix evaluate_lpv_matrix(const QuadraticSdcSystem& sys, const PolytopicAutoencoder& model, const Vector& rho) {
  require_dims(model.n == sys.n(), "evaluate_lpv_matrix: model and system dimensions differ");
  return evaluate_coefficient(sys, decode(model, rho));
}

/// Central-difference Jacobian (q x r) of the clustering network at rho.
inline Matrix clustering_jacobian_fd(const PolytopicAutoencoder& model, const Vector& rho, double step) {
  if (!(step > 0.0)) throw ConfigError("clustering_jacobian_fd: step must be positive");
  require_dims(rho.size() == model.r, "clustering_jacobian_fd: rho has size " + std::to_string(rho.size()));
  Matrix jac(model.q, model.r);
  for (Index j = 0; j < model.r; ++j) {
    Vector up = rho;
    Vector down = rho;
    up(j) += step;
    down(j) -= step;
    jac.col(j) = (cluster_weights(model, up) - cluster_weights(model, down)) / (2.0 * step);
  }
  return jac;
}

inline Json lpv_to_json(const LpvCoefficients& lpv) {
  Json j;
  j["n"] = lpv.n();
  j["r"] = lpv.r();
  j["A0"] = matrix_to_json(lpv.a0);
  j["A"] = Json::array();
  for (const Matrix& m : lpv.a) j["A"].push_back(matrix_to_json(m));
  j["mass"] = matrix_to_json(lpv.mass);
  return j;
}

inline LpvCoefficients lpv_from_json(const Json& j) {
  LpvCoefficients lpv;
  try {
    const Index n = j.at("n").get<Index>();
    lpv.a0 = matrix_from_json(j.at("A0"), n);
    for (const Json& m : j.at("A")) lpv.a.push_back(matrix_from_json(m, n));
    lpv.mass = matrix_from_json(j.at("mass"), n);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("LPV JSON: ") + e.what());
  }
  return lpv;
}

}  // namespace pae
