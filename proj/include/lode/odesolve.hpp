#pragma once

// Explicit Runge-Kutta integration of (learned) vector fields.
//
//   rk4_38_solve     fixed-step fourth-order Runge-Kutta, 3/8 rule
//   dopri5_solve     adaptive Dormand-Prince 5(4), inference only
//   solve_with_tape  rk4_38_solve that records stage inputs so cotangents can
//                    be pulled back through the step arithmetic

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "lode/errors.hpp"
#include "lode/numcore.hpp"
#include "lode/params.hpp"

namespace lode {

template <class F>
concept VectorFieldLike = requires(const F& f, const Vector& h, double t) {
  { f.arity() } -> std::convertible_to<std::size_t>;
  { f(h, t) } -> std::convertible_to<Vector>;
};

/// A field that can pull an output cotangent back to (state cotangent, parameter gradient).
template <class F>
concept DifferentiableField =
    VectorFieldLike<F> && requires(const F& f, const Vector& h, double t, typename F::Grad& g) {
      { f.backward(h, t, h, g) } -> std::convertible_to<Vector>;
      { f.zero_grad() } -> std::convertible_to<typename F::Grad>;
    };

/// f(h, t) = MLP(h) or MLP([h; t]); a non-owning view over its parameters.
class NeuralField {
 public:
  using Grad = MlpParams;

  NeuralField(const MlpParams& params, bool time_input = false)
      : params_(&params), time_input_(time_input) {
    const std::size_t expect_in = params.output_dim() + (time_input ? 1 : 0);
    if (params.input_dim() != expect_in) {
      throw ShapeError("NeuralField: network maps " + std::to_string(params.input_dim()) +
                       " inputs to " + std::to_string(params.output_dim()) +
                       " outputs; expected input " + std::to_string(expect_in));
    }
  }

  std::size_t arity() const { return params_->output_dim(); }
  bool time_input() const { return time_input_; }
  const MlpParams& params() const { return *params_; }

  Vector operator()(const Vector& h, double t) const { return mlp_forward(*params_, input(h, t)); }

  Vector backward(const Vector& h, double t, const Vector& cot, MlpParams& grad) const {
    Vector cin = mlp_backward(*params_, input(h, t), cot, grad);
    if (!time_input_) return cin;
    Vector out(h.size());
    std::copy_n(cin.begin(), h.size(), out.begin());
    return out;
  }

  MlpParams zero_grad() const { return zeros_like(*params_); }

 private:
  Vector input(const Vector& h, double t) const {
    if (!time_input_) return h;
    Vector x(h.size() + 1);
    std::copy(h.begin(), h.end(), x.begin());
    x[h.size()] = t;
    return x;
  }

  const MlpParams* params_;
  bool time_input_;
};

/// f(h) = A h; a non-owning view over A.
class LinearField {
 public:
  using Grad = Matrix;

  explicit LinearField(const Matrix& a) : a_(&a) {
    if (!a.square()) throw ShapeError("LinearField: non-square matrix " + a.shape_str());
  }

  std::size_t arity() const { return a_->rows(); }
  Vector operator()(const Vector& h, double) const { return matvec(*a_, h); }
  Vector backward(const Vector& h, double, const Vector& cot, Matrix& grad) const {
    outer_acc(grad, cot, h);
    return matvec_t(*a_, cot);
  }
  Matrix zero_grad() const { return Matrix(a_->rows(), a_->cols()); }

 private:
  const Matrix* a_;
};

/// Adapts any callable (h, t) -> dh/dt. Not differentiable.
template <class Fn>
class FunctionField {
 public:
  FunctionField(std::size_t arity, Fn fn) : arity_(arity), fn_(std::move(fn)) {}
  std::size_t arity() const { return arity_; }
  Vector operator()(const Vector& h, double t) const { return fn_(h, t); }

 private:
  std::size_t arity_;
  Fn fn_;
};

// ---------------------------------------------------------------------------

/// Fixed-step integration interval. t1 < t0 integrates backward in time.
struct SolveSpan {
  double t0 = 0.0;
  double t1 = 1.0;
  std::size_t steps = 4;
};

struct AdaptiveSpan {
  double t0 = 0.0;
  double t1 = 1.0;
  double rtol = 1e-6;
  double atol = 1e-8;
  std::size_t max_steps = 100000;
  double safety = 0.9;
  double max_growth = 5.0;
  double min_shrink = 0.2;
  /// Initial trial step as a fraction of |t1 - t0|.
  double initial_fraction = 0.01;
  /// Smallest admissible |step| as a fraction of |t1 - t0|.
  double min_step_fraction = 1e-10;
};

struct SolveTrace {
  std::vector<double> times;
  std::vector<Vector> states;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t evaluations = 0;
  /// Normalized error estimate of every accepted adaptive step.
  std::vector<double> accepted_errors;

  const Vector& final_state() const { return states.back(); }
};

namespace detail {

inline void check_state(const Vector& h, std::size_t step) {
  if (!all_finite(h.values())) throw DivergenceError("non-finite solver state", step);
}

inline void check_arity(std::size_t arity, const Vector& h0, const char* who) {
  if (h0.size() != arity) {
    throw ShapeError(std::string(who) + ": initial state length " + std::to_string(h0.size()) +
                     " vs field arity " + std::to_string(arity));
  }
}

/// y + a*k (fresh vector)
inline Vector shifted(const Vector& y, double a, const Vector& k) {
  Vector out = y;
  axpy(out, a, k);
  return out;
}

}  // namespace detail

/// Stage inputs of one 3/8-rule step; the field is re-evaluated from them in reverse.
struct Rk4StepRecord {
  double t = 0.0;
  double dt = 0.0;
  Vector u1, u2, u3, u4;
};

/// One step of the 3/8 rule. When `record` is given, stage inputs are stored.
template <VectorFieldLike F>
Vector rk4_38_step(const F& f, const Vector& y, double t, double dt,
                   Rk4StepRecord* record = nullptr) {
  const Vector k1 = f(y, t);
  Vector u2 = detail::shifted(y, dt / 3.0, k1);
  const Vector k2 = f(u2, t + dt / 3.0);
  Vector u3 = detail::shifted(y, -dt / 3.0, k1);
  axpy(u3, dt, k2);
  const Vector k3 = f(u3, t + 2.0 * dt / 3.0);
  Vector u4 = detail::shifted(y, dt, k1);
  axpy(u4, -dt, k2);
  axpy(u4, dt, k3);
  const Vector k4 = f(u4, t + dt);

  Vector out = y;
  const double w = dt / 8.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] += w * (k1[i] + 3.0 * k2[i] + 3.0 * k3[i] + k4[i]);
  }
  if (record) {
    *record = Rk4StepRecord{t, dt, y, std::move(u2), std::move(u3), std::move(u4)};
  }
  return out;
}

/// Reverse of rk4_38_step: returns the cotangent on the step input and
/// accumulates the field's parameter gradient.
template <DifferentiableField F>
Vector rk4_38_step_backward(const F& f, const Rk4StepRecord& r, const Vector& cot_out,
                            typename F::Grad& grad) {
  const double dt = r.dt;
  Vector cy = cot_out;
  Vector ck1 = (dt / 8.0) * cot_out;
  Vector ck2 = (3.0 * dt / 8.0) * cot_out;
  Vector ck3 = ck2;
  const Vector ck4 = (dt / 8.0) * cot_out;

  const Vector cu4 = f.backward(r.u4, r.t + dt, ck4, grad);
  cy += cu4;
  axpy(ck1, dt, cu4);
  axpy(ck2, -dt, cu4);
  axpy(ck3, dt, cu4);

  const Vector cu3 = f.backward(r.u3, r.t + 2.0 * dt / 3.0, ck3, grad);
  cy += cu3;
  axpy(ck1, -dt / 3.0, cu3);
  axpy(ck2, dt, cu3);

  const Vector cu2 = f.backward(r.u2, r.t + dt / 3.0, ck2, grad);
  cy += cu2;
  axpy(ck1, dt / 3.0, cu2);

  cy += f.backward(r.u1, r.t, ck1, grad);
  return cy;
}

/// Recorded fixed-step solve; `backward` walks the steps in reverse.
class SolveTape {
 public:
  std::vector<Rk4StepRecord> steps;

  bool empty() const { return steps.empty(); }

  template <DifferentiableField F>
  Vector backward(const F& f, const Vector& cot_out, typename F::Grad& grad) const {
    Vector cot = cot_out;
    for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
      cot = rk4_38_step_backward(f, *it, cot, grad);
    }
    return cot;
  }
};

/// Integrates from t0 to t1 in `steps` uniform steps and returns the final
/// state. Zero-length spans are the identity and record nothing.
template <VectorFieldLike F>
Vector integrate_fixed(const F& f, Vector y, double t0, double t1, std::size_t steps,
                       SolveTape* tape = nullptr, std::size_t* evaluations = nullptr) {
  if (steps == 0) throw SpecError("fixed-step solve: steps must be >= 1");
  if (t1 == t0) return y;
  const double dt = (t1 - t0) / static_cast<double>(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    const double t = t0 + static_cast<double>(s) * dt;
    if (tape) {
      tape->steps.emplace_back();
      y = rk4_38_step(f, y, t, dt, &tape->steps.back());
    } else {
      y = rk4_38_step(f, y, t, dt);
    }
    if (evaluations) *evaluations += 4;
    detail::check_state(y, s);
  }
  return y;
}

template <VectorFieldLike F>
SolveTrace rk4_38_solve(const F& f, const Vector& h0, const SolveSpan& span) {
  detail::check_arity(f.arity(), h0, "rk4_38_solve");
  if (span.steps == 0) throw SpecError("rk4_38_solve: steps must be >= 1");
  SolveTrace trace;
  trace.times.push_back(span.t0);
  trace.states.push_back(h0);
  if (span.t1 == span.t0) return trace;
  const double dt = (span.t1 - span.t0) / static_cast<double>(span.steps);
  Vector y = h0;
  for (std::size_t s = 0; s < span.steps; ++s) {
    const double t = span.t0 + static_cast<double>(s) * dt;
    y = rk4_38_step(f, y, t, dt);
    trace.evaluations += 4;
    detail::check_state(y, s);
    trace.times.push_back(s + 1 == span.steps ? span.t1 : t + dt);
    trace.states.push_back(y);
    ++trace.accepted;
  }
  return trace;
}

template <DifferentiableField F>
struct TapedSolve {
  SolveTrace trace;
  SolveTape tape;

  /// Cotangent on the final state -> cotangent on h0; accumulates into `grad`.
  Vector backward(const F& f, const Vector& cot_out, typename F::Grad& grad) const {
    return tape.backward(f, cot_out, grad);
  }
};

template <DifferentiableField F>
TapedSolve<F> solve_with_tape(const F& f, const Vector& h0, const SolveSpan& span) {
  detail::check_arity(f.arity(), h0, "solve_with_tape");
  if (span.steps == 0) throw SpecError("solve_with_tape: steps must be >= 1");
  TapedSolve<F> out;
  out.trace.times.push_back(span.t0);
  out.trace.states.push_back(h0);
  if (span.t1 == span.t0) return out;
  const double dt = (span.t1 - span.t0) / static_cast<double>(span.steps);
  Vector y = h0;
  out.tape.steps.reserve(span.steps);
  for (std::size_t s = 0; s < span.steps; ++s) {
    const double t = span.t0 + static_cast<double>(s) * dt;
    out.tape.steps.emplace_back();
    y = rk4_38_step(f, y, t, dt, &out.tape.steps.back());
    out.trace.evaluations += 4;
    detail::check_state(y, s);
    out.trace.times.push_back(s + 1 == span.steps ? span.t1 : t + dt);
    out.trace.states.push_back(y);
    ++out.trace.accepted;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dormand-Prince 5(4)

namespace dopri {
inline constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
inline constexpr double a21 = 1.0 / 5;
inline constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
inline constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
inline constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                        a54 = -212.0 / 729;
inline constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                        a64 = 49.0 / 176, a65 = -5103.0 / 18656;
inline constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                        a75 = -2187.0 / 6784, a76 = 11.0 / 84;
// Difference between the fifth- and fourth-order weights.
inline constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                        e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
}  // namespace dopri

template <VectorFieldLike F>
SolveTrace dopri5_solve(const F& f, const Vector& h0, const AdaptiveSpan& span) {
  detail::check_arity(f.arity(), h0, "dopri5_solve");
  if (!(span.rtol > 0.0) || !(span.atol > 0.0)) throw SpecError("dopri5_solve: rtol, atol must be > 0");
  if (span.max_steps == 0) throw SpecError("dopri5_solve: max_steps must be >= 1");

  SolveTrace trace;
  trace.times.push_back(span.t0);
  trace.states.push_back(h0);
  if (span.t1 == span.t0) return trace;

  using namespace dopri;
  const double length = std::abs(span.t1 - span.t0);
  const double dir = span.t1 > span.t0 ? 1.0 : -1.0;
  const double min_step = span.min_step_fraction * length;
  const std::size_t n = h0.size();

  double t = span.t0;
  Vector y = h0;
  Vector k1 = f(y, t);
  ++trace.evaluations;
  // A vanishing derivative at the start gives no scale for the first step, so
  // the whole span is tried and the error estimate decides.
  const bool flat_start = std::all_of(k1.begin(), k1.end(), [](double v) { return v == 0.0; });
  double h = flat_start ? length : span.initial_fraction * length;
  bool last_rejected = false;

  auto stage = [&](std::initializer_list<std::pair<double, const Vector*>> terms) {
    Vector u = y;
    for (const auto& [a, k] : terms) {
      if (a != 0.0) axpy(u, h * dir * a, *k);
    }
    return u;
  };

  while (dir * (span.t1 - t) > 0.0) {
    if (trace.accepted + trace.rejected >= span.max_steps) {
      throw NonConvergenceError("dopri5_solve: max_steps (" + std::to_string(span.max_steps) +
                                ") exhausted at t = " + std::to_string(t));
    }
    if (h < min_step) {
      throw StiffnessError("dopri5_solve: step size " + std::to_string(h) +
                           " fell below floor at t = " + std::to_string(t));
    }
    const double remaining = std::abs(span.t1 - t);
    const bool final_step = h >= remaining;
    if (final_step) h = remaining;
    const double sh = h * dir;

    const Vector k2 = f(stage({{a21, &k1}}), t + c2 * sh);
    const Vector k3 = f(stage({{a31, &k1}, {a32, &k2}}), t + c3 * sh);
    const Vector k4 = f(stage({{a41, &k1}, {a42, &k2}, {a43, &k3}}), t + c4 * sh);
    const Vector k5 = f(stage({{a51, &k1}, {a52, &k2}, {a53, &k3}, {a54, &k4}}), t + c5 * sh);
    const Vector k6 =
        f(stage({{a61, &k1}, {a62, &k2}, {a63, &k3}, {a64, &k4}, {a65, &k5}}), t + sh);
    const Vector y_new =
        stage({{a71, &k1}, {a73, &k3}, {a74, &k4}, {a75, &k5}, {a76, &k6}});
    const double t_new = final_step ? span.t1 : t + sh;
    const Vector k7 = f(y_new, t_new);
    trace.evaluations += 6;

    double err_sq = 0.0;
    bool finite = all_finite(y_new.values());
    for (std::size_t i = 0; i < n && finite; ++i) {
      const double e =
          sh * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
      const double sc = span.atol + span.rtol * std::max(std::abs(y[i]), std::abs(y_new[i]));
      err_sq += (e / sc) * (e / sc);
    }
    const double err = finite ? std::sqrt(err_sq / static_cast<double>(n)) : 1e300;

    if (err <= 1.0) {
      t = t_new;
      y = y_new;
      k1 = k7;  // first-same-as-last
      ++trace.accepted;
      trace.accepted_errors.push_back(err);
      trace.times.push_back(t);
      trace.states.push_back(y);
      double factor = err == 0.0 ? span.max_growth : span.safety * std::pow(err, -0.2);
      factor = std::clamp(factor, span.min_shrink, span.max_growth);
      if (last_rejected) factor = std::min(factor, 1.0);
      h *= factor;
      last_rejected = false;
    } else {
      ++trace.rejected;
      double factor = finite ? span.safety * std::pow(err, -0.2) : span.min_shrink;
      factor = std::clamp(factor, span.min_shrink, 1.0);
      h *= factor;
      last_rejected = true;
    }
  }
  return trace;
}

}  // namespace lode
