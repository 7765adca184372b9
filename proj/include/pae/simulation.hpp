#pragma once

// Semi-implicit Euler time stepping for M v' = A_lin v + H(v, v) + B u:
// the linear part is implicit, the quadratic term and the input explicit.
// Feedback is held constant over a step (zero-order hold at the left end).

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pae/autoencoder.hpp"
#include "pae/common.hpp"
#include "pae/sdc_model.hpp"
#include "pae/sdre_control.hpp"

namespace pae {

struct Trajectory {
  Vector times;
  Matrix states;   // n x (N+1)
  Matrix inputs;   // m x N, input applied on [t_k, t_{k+1})
  Matrix outputs;  // l x (N+1)
  bool blowup = false;
  std::optional<double> blowup_time;
  /// Set when a feedback evaluation failed (also reported as blowup).
  std::string failure;

  Index steps() const { return inputs.cols(); }
};

class SemiImplicitStepper {
 public:
  SemiImplicitStepper(const QuadraticSdcSystem& sys, double dt) : sys_(&sys), dt_(dt) {
    if (!(dt > 0.0)) throw ConfigError("stepper: dt must be positive");
    lu_.compute(sys.mass - dt * sys.a_lin);
    if (lu_.rcond() < 1e-14) throw NumericalError("stepper: step matrix M - dt A_lin is singular");
  }

  /// Solves (M - dt A_lin) v_next = M v + dt (H(v, v) + B u).
  Vector step(const Vector& v, const Vector& u) const {
    require_dims(v.size() == sys_->n() && u.size() == sys_->m(), "step: state/input size mismatch");
    return lu_.solve(sys_->mass * v + dt_ * (sys_->h.apply(v, v) + sys_->b * u));
  }

  double dt() const { return dt_; }

 private:
  const QuadraticSdcSystem* sys_;
  double dt_;
  Eigen::PartialPivLU<Matrix> lu_;
};

inline Vector step_semi_implicit(const QuadraticSdcSystem& sys, const Vector& v, const Vector& u, double dt) {
  return SemiImplicitStepper(sys, dt).step(v, u);
}

using InputSignal = std::function<Vector(double)>;
using FeedbackLaw = std::function<Vector(const Vector&)>;

/// u(t) = (sin t, 0, ..., 0)
inline Vector test_input(double t, Index m) {
  Vector u = Vector::Zero(m);
  if (m > 0) u(0) = std::sin(t);
  return u;
}

struct SimulationOptions {
  double dt = 0.5 / 400.0;
  /// Integration stops once the state M-norm exceeds this value.
  double blowup_threshold = std::numeric_limits<double>::infinity();
  /// Initial state; zero when empty.
  Vector v0;
};

namespace detail {

inline Index step_count(double t_end, double dt) {
  if (!(t_end > 0.0)) throw ConfigError("simulate: t_end must be positive");
  return static_cast<Index>(std::llround(t_end / dt));
}

// Runs the stepper with inputs from `input(k, v_k)`.
template <class InputAt>
Trajectory integrate(const QuadraticSdcSystem& sys, Index steps, const SimulationOptions& opt, InputAt&& input) {
  const SemiImplicitStepper stepper(sys, opt.dt);
  Trajectory tr;
  tr.states.resize(sys.n(), steps + 1);
  tr.inputs.resize(sys.m(), steps);
  tr.states.col(0) = opt.v0.size() ? opt.v0 : Vector::Zero(sys.n());
  require_dims(tr.states.rows() == sys.n(), "simulate: initial state has wrong size");
  Index done = 0;
  for (Index k = 0; k < steps; ++k) {
    const Vector vk = tr.states.col(k);
    Vector u;
    try {
      u = input(k, vk);
    } catch (const NumericalError& e) {
      tr.blowup = true;
      tr.blowup_time = static_cast<double>(k) * opt.dt;
      tr.failure = e.what();
      break;
    }
    tr.inputs.col(k) = u;
    const Vector next = stepper.step(vk, u);
    tr.states.col(k + 1) = next;
    done = k + 1;
    if (!next.allFinite() || m_norm(sys, next) > opt.blowup_threshold) {
      tr.blowup = true;
      tr.blowup_time = static_cast<double>(k + 1) * opt.dt;
      break;
    }
  }
  tr.states.conservativeResize(Eigen::NoChange, done + 1);
  tr.inputs.conservativeResize(Eigen::NoChange, done);
  tr.times.resize(done + 1);
  for (Index k = 0; k <= done; ++k) tr.times(k) = static_cast<double>(k) * opt.dt;
  tr.outputs = sys.c * tr.states;
  return tr;
}

}  // namespace detail

inline Trajectory simulate_open_loop(const QuadraticSdcSystem& sys, const InputSignal& u_fn, double t_end,
                                     const SimulationOptions& opt = {}) {
  const Index steps = detail::step_count(t_end, opt.dt);
  return detail::integrate(sys, steps, opt,
                           [&](Index k, const Vector&) { return u_fn(static_cast<double>(k) * opt.dt); });
}

/// Test input on [0, t_s), feedback `law(v_k)` afterwards.
inline Trajectory simulate_closed_loop(const QuadraticSdcSystem& sys, const FeedbackLaw& law, double t_s,
                                       double t_end, const SimulationOptions& opt = {}) {
  if (t_s > t_end) throw ConfigError("simulate_closed_loop: t_s must not exceed t_end");
  const Index steps = detail::step_count(t_end, opt.dt);
  const Index switch_step = static_cast<Index>(std::llround(t_s / opt.dt));
  const Index m = sys.m();
  return detail::integrate(sys, steps, opt, [&](Index k, const Vector& v) -> Vector {
    if (k < switch_step) return test_input(static_cast<double>(k) * opt.dt, m);
    Vector u = law(v);
    if (!u.allFinite()) throw NumericalError("feedback returned a non-finite input");
    return u;
  });
}

/// Feedback law of a series expansion: encode v, then u = -(1/gamma) K(rho) v.
inline FeedbackLaw expanded_feedback_law(const PolytopicAutoencoder& model, const FeedbackExpansion& exp) {
  return [&model, &exp](const Vector& v) { return expanded_feedback(exp, encode(model, v).rho, v); };
}

inline FeedbackLaw exact_sdre_feedback_law(const QuadraticSdcSystem& sys, const PolytopicAutoencoder& model,
                                           double gamma) {
  return [&sys, &model, gamma](const Vector& v) { return exact_sdre_feedback(sys, model, v, gamma); };
}

/// Composite trapezoidal rule on a (possibly nonuniform) grid.
inline double trapezoid(const Vector& t, const Vector& f) {
  require_dims(t.size() == f.size(), "trapezoid: size mismatch");
  double acc = 0.0;
  for (Index k = 0; k + 1 < t.size(); ++k) acc += 0.5 * (t(k + 1) - t(k)) * (f(k) + f(k + 1));
  return acc;
}

/// (1/t_e) (int_{t_s}^{t_e} ||u(t)||^2 dt)^{1/2} with u = law(v(t)) on the
/// stored grid; nullopt (blowup) when the trajectory is flagged.
inline std::optional<double> performance_index(const Trajectory& tr, const FeedbackLaw& law, double t_s, double t_e) {
  if (tr.blowup) return std::nullopt;
  if (!(t_e > 0.0) || t_s > t_e) throw ConfigError("performance_index: need 0 <= t_s <= t_e, t_e > 0");
  const double slack = 1e-9 * std::max(1.0, t_e);
  if (tr.times(tr.times.size() - 1) < t_e - slack) throw ConfigError("performance_index: trajectory ends before t_e");
  std::vector<double> ts, fs;
  for (Index k = 0; k < tr.times.size(); ++k) {
    const double t = tr.times(k);
    if (t < t_s - slack || t > t_e + slack) continue;
    ts.push_back(t);
    fs.push_back(law(tr.states.col(k)).squaredNorm());
  }
  const Vector tv = Eigen::Map<const Vector>(ts.data(), static_cast<Index>(ts.size()));
  const Vector fv = Eigen::Map<const Vector>(fs.data(), static_cast<Index>(fs.size()));
  return std::sqrt(trapezoid(tv, fv)) / t_e;
}

struct ErrorSeries {
  std::vector<double> errors;
  double average = 0.0;
};

namespace detail {

template <class Reconstruct>
ErrorSeries error_series(const Matrix& snapshots, const Matrix& mass, Reconstruct&& rec) {
  ErrorSeries out;
  for (Index i = 0; i < snapshots.cols(); ++i) {
    const Vector v = snapshots.col(i);
    out.errors.push_back(m_norm(mass, v - rec(v)));
  }
  if (!out.errors.empty())
    out.average = std::accumulate(out.errors.begin(), out.errors.end(), 0.0) / static_cast<double>(out.errors.size());
  return out;
}

}  // namespace detail

/// Pointwise ||v_i - decode(encode(v_i))||_M and their mean.
inline ErrorSeries reconstruction_error_series(const PolytopicAutoencoder& model, const Matrix& snapshots,
                                               const Matrix& mass) {
  require_dims(snapshots.rows() == model.n, "reconstruction_error_series: snapshot size mismatch");
  return detail::error_series(snapshots, mass, [&](const Vector& v) { return reconstruct(model, v); });
}

/// Same with the first-order surrogate decoder W (e1 (x) rho).
inline ErrorSeries first_order_error_series(const PolytopicAutoencoder& model, const Matrix& snapshots,
                                            const Matrix& mass) {
  require_dims(snapshots.rows() == model.n, "first_order_error_series: snapshot size mismatch");
  return detail::error_series(snapshots, mass,
                              [&](const Vector& v) { return decode_first_order(model, encode(model, v).rho); });
}

inline ErrorSeries reconstruction_error_series(const PodBasis& pod, const Matrix& snapshots, const Matrix& mass) {
  require_dims(snapshots.rows() == pod.n(), "reconstruction_error_series: snapshot size mismatch");
  return detail::error_series(snapshots, mass, [&](const Vector& v) { return pod.reconstruct(v); });
}

}  // namespace pae
