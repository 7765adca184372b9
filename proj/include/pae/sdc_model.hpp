#pragma once

// Quadratic state-dependent-coefficient systems
//
//   M v' = A(v) v + B u,   y = C v,   A(v) = A_lin + H(v, .)
//
// and the viscous Burgers benchmark built on top of them.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pae/common.hpp"
#include "pae/json_io.hpp"

namespace pae {

/// Bilinear map (v, w) -> H(v, w) in R^n stored as a sparse third-order
/// tensor: H(v, w)_row += value * v_left * w_right for every entry.
class BilinearForm {
 public:
  struct Entry {
    Index row;
    Index left;
    Index right;
    double value;
  };

  BilinearForm() = default;
  explicit BilinearForm(Index n) : n_(n) {}

  Index dim() const { return n_; }
  const std::vector<Entry>& entries() const { return entries_; }

  void add(Index row, Index left, Index right, double value) {
    require_dims(row >= 0 && row < n_ && left >= 0 && left < n_ && right >= 0 && right < n_,
                 "BilinearForm::add: index out of range");
    if (value != 0.0) entries_.push_back({row, left, right, value});
  }

  Vector apply(const Vector& v, const Vector& w) const {
    require_dims(v.size() == n_ && w.size() == n_, "BilinearForm::apply: expected vectors of size " +
                                                       std::to_string(n_));
    Vector out = Vector::Zero(n_);
    for (const Entry& e : entries_) out(e.row) += e.value * v(e.left) * w(e.right);
    return out;
  }

  /// The matrix w -> H(v, w).
  Matrix left_loaded(const Vector& v) const {
    require_dims(v.size() == n_, "BilinearForm::left_loaded: expected vector of size " + std::to_string(n_));
    Matrix out = Matrix::Zero(n_, n_);
    for (const Entry& e : entries_) out(e.row, e.right) += e.value * v(e.left);
    return out;
  }

  /// Blocks H_i with H(v, w)_i = v^T H_i w.
  std::vector<Matrix> dense_blocks() const {
    std::vector<Matrix> blocks(static_cast<std::size_t>(n_), Matrix::Zero(n_, n_));
    for (const Entry& e : entries_) blocks[static_cast<std::size_t>(e.row)](e.left, e.right) += e.value;
    return blocks;
  }

  static BilinearForm from_dense_blocks(const std::vector<Matrix>& blocks) {
    const auto n = static_cast<Index>(blocks.size());
    BilinearForm h(n);
    for (Index i = 0; i < n; ++i) {
      const Matrix& b = blocks[static_cast<std::size_t>(i)];
      require_dims(b.rows() == n && b.cols() == n, "BilinearForm: block " + std::to_string(i) + " has shape " +
                                                       shape(b) + ", expected " + std::to_string(n) + "x" +
                                                       std::to_string(n));
      for (Index l = 0; l < n; ++l)
        for (Index r = 0; r < n; ++r) h.add(i, l, r, b(l, r));
    }
    return h;
  }

 private:
  Index n_ = 0;
  std::vector<Entry> entries_;
};

struct QuadraticSdcSystem {
  Matrix mass;
  Matrix a_lin;
  BilinearForm h;
  Matrix b;
  Matrix c;

  Index n() const { return a_lin.rows(); }
  Index m() const { return b.cols(); }
  Index l() const { return c.rows(); }

  /// Throws DimensionError on inconsistent shapes, NumericalError when the
  /// mass matrix is not symmetric positive definite.
  void validate() const {
    const Index nn = n();
    require_dims(a_lin.cols() == nn, "system: A_lin must be square, got " + shape(a_lin));
    require_dims(mass.rows() == nn && mass.cols() == nn, "system: mass matrix has shape " + shape(mass));
    require_dims(h.dim() == nn, "system: bilinear form dimension " + std::to_string(h.dim()));
    require_dims(b.rows() == nn, "system: B has shape " + shape(b));
    require_dims(c.cols() == nn, "system: C has shape " + shape(c));
    if ((mass - mass.transpose()).norm() > 1e-12 * std::max(1.0, mass.norm()))
      throw NumericalError("system: mass matrix is not symmetric");
    Eigen::LLT<Matrix> llt(mass);
    if (llt.info() != Eigen::Success) throw NumericalError("system: mass matrix is not positive definite");
  }
};

/// A(v) = A_lin + H(v, .)
inline Matrix evaluate_coefficient(const QuadraticSdcSystem& sys, const Vector& v) {
  require_dims(v.size() == sys.n(), "evaluate_coefficient: state has size " + std::to_string(v.size()));
  return sys.a_lin + sys.h.left_loaded(v);
}

/// A(v) v + B u, i.e. M v'.
inline Vector rhs(const QuadraticSdcSystem& sys, const Vector& v, const Vector& u) {
  require_dims(v.size() == sys.n(), "rhs: state has size " + std::to_string(v.size()));
  require_dims(u.size() == sys.m(), "rhs: input has size " + std::to_string(u.size()));
  return sys.a_lin * v + sys.h.apply(v, v) + sys.b * u;
}

inline double m_norm(const Matrix& mass, const Vector& v) {
  require_dims(v.size() == mass.rows(), "m_norm: state has size " + std::to_string(v.size()));
  return std::sqrt(std::max(0.0, v.dot(mass * v)));
}

inline double m_norm(const QuadraticSdcSystem& sys, const Vector& v) { return m_norm(sys.mass, v); }

// --- Burgers benchmark -----------------------------------------------------

struct Interval {
  double lo;
  double hi;
};

/// 1-D viscous Burgers equation on (0, 1) with homogeneous Dirichlet data,
///   v_t = nu v_xx - U v_x + growth v - v v_x + kappa v^2 + sum_k b_k(x) u_k,
/// discretized by central differences on n_grid interior nodes.
struct BurgersConfig {
  Index n_grid = 64;
  double viscosity = 0.05;
  /// Unset means default_growth(viscosity, advection).
  std::optional<double> growth;
  /// Constant transport speed U.
  double advection = 1.0;
  /// Quadratic reaction coefficient kappa.
  double reaction = 12.0;
  double input_gain = 1.0;
  std::array<Interval, 2> actuators{{{0.0, 0.5}, {0.5, 1.0}}};
  std::array<Interval, 2> sensors{{{0.30, 0.45}, {0.75, 0.90}}};
};

/// Growth rate placing the two slowest modes of nu d_xx - U d_x (decay
/// rates nu pi^2 k^2 + U^2 / 4 nu, k = 1, 2) in the right half plane.
inline double default_growth(double viscosity, double advection = 0.0) {
  return viscosity * M_PI * M_PI * 4.0 + advection * advection / (4.0 * viscosity) + 0.5;
}

namespace detail {

inline std::vector<Index> nodes_in(const Interval& iv, Index n, double h) {
  std::vector<Index> out;
  for (Index i = 0; i < n; ++i) {
    const double x = static_cast<double>(i + 1) * h;
    if (x >= iv.lo && x <= iv.hi) out.push_back(i);
  }
  return out;
}

}  // namespace detail

inline QuadraticSdcSystem make_burgers_benchmark(const BurgersConfig& cfg = {}) {
  if (cfg.n_grid < 8) throw ConfigError("burgers: n_grid must be at least 8");
  if (!(cfg.viscosity > 0.0)) throw ConfigError("burgers: viscosity must be positive");
  const Index n = cfg.n_grid;
  const double h = 1.0 / static_cast<double>(n + 1);
  const double growth = cfg.growth.value_or(default_growth(cfg.viscosity, cfg.advection));

  // Actuators must not share nodes with each other, nor sensors with each
  // other; an actuator and a sensor may overlap.
  std::vector<std::vector<Index>> supports;
  auto check_group = [&](const std::array<Interval, 2>& group, const char* what) {
    for (const auto& iv : group) {
      supports.push_back(detail::nodes_in(iv, n, h));
      if (supports.back().empty())
        throw ConfigError("burgers: n_grid = " + std::to_string(n) + " leaves a " + what + " support empty");
    }
    const auto& s0 = supports[supports.size() - 2];
    const auto& s1 = supports.back();
    std::vector<Index> common;
    std::set_intersection(s0.begin(), s0.end(), s1.begin(), s1.end(),
                          std::back_inserter(common));
    if (!common.empty()) throw ConfigError(std::string("burgers: ") + what + " supports overlap on the grid");
  };
  check_group(cfg.actuators, "actuator");
  check_group(cfg.sensors, "sensor");

  QuadraticSdcSystem sys;
  sys.mass = h * Matrix::Identity(n, n);

  sys.a_lin = Matrix::Zero(n, n);
  const double diff = cfg.viscosity / h;  // h * nu / h^2
  for (Index i = 0; i < n; ++i) {
    sys.a_lin(i, i) = -2.0 * diff + h * growth;
    if (i > 0) sys.a_lin(i, i - 1) = diff + 0.5 * cfg.advection;
    if (i + 1 < n) sys.a_lin(i, i + 1) = diff - 0.5 * cfg.advection;
  }

  // Energy-conserving (skew-symmetric) convection plus reaction, scaled by
  // the mass h:
  //   H(v, w) = -(h/3) [v o D1 w + D1 (v o w)] + h kappa v o w,
  //   (D1 w)_i = (w_{i+1} - w_{i-1}) / 2h.
  sys.h = BilinearForm(n);
  constexpr double sixth = 1.0 / 6.0;
  for (Index i = 0; i < n; ++i) {
    sys.h.add(i, i, i, h * cfg.reaction);
    if (i + 1 < n) {
      sys.h.add(i, i, i + 1, -sixth);
      sys.h.add(i, i + 1, i + 1, -sixth);
    }
    if (i > 0) {
      sys.h.add(i, i, i - 1, sixth);
      sys.h.add(i, i - 1, i - 1, sixth);
    }
  }

  sys.b = Matrix::Zero(n, 2);
  sys.c = Matrix::Zero(2, n);
  for (Index k = 0; k < 2; ++k) {
    for (Index i : supports[static_cast<std::size_t>(k)]) sys.b(i, k) = h * cfg.input_gain;
    const auto& sensor = supports[static_cast<std::size_t>(k + 2)];
    for (Index i : sensor) sys.c(k, i) = 1.0 / static_cast<double>(sensor.size());
  }
  return sys;
}

// --- serialization ---------------------------------------------------------

inline Json system_to_json(const QuadraticSdcSystem& sys) {
  Json j;
  j["n"] = sys.n();
  j["m"] = sys.m();
  j["l"] = sys.l();
  j["mass"] = matrix_to_json(sys.mass);
  j["a_lin"] = matrix_to_json(sys.a_lin);
  Json blocks = Json::array();
  for (const Matrix& blk : sys.h.dense_blocks()) blocks.push_back(matrix_to_json(blk));
  j["h"] = std::move(blocks);
  j["b"] = matrix_to_json(sys.b);
  j["c"] = matrix_to_json(sys.c);
  return j;
}

inline QuadraticSdcSystem system_from_json(const Json& j) {
  QuadraticSdcSystem sys;
  try {
    const Index n = j.at("n").get<Index>();
    sys.mass = matrix_from_json(j.at("mass"), n);
    sys.a_lin = matrix_from_json(j.at("a_lin"), n);
    std::vector<Matrix> blocks;
    for (const Json& blk : j.at("h")) blocks.push_back(matrix_from_json(blk, n));
    sys.h = BilinearForm::from_dense_blocks(blocks);
    sys.b = matrix_from_json(j.at("b"), j.value("m", Index{0}));
    sys.c = matrix_from_json(j.at("c"), n);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("system JSON: ") + e.what());
  }
  sys.validate();
  return sys;
}

}  // namespace pae
