#pragma once

// Recurrent cells and the continuous-time encoders built from them.
//
// ODE-RNN:   h'_i = ODESolve(f, h_{i-1}, (t_{i-1}, t_i)),  h_i = RNNCell(h'_i, x_i)
// ODE-LSTM:  h'_i as above, (C_i, h_i) = LSTMCell(C_{i-1}, h'_i, x_i)
//
// Only h is integrated; C passes between cells untouched by the solver.
// Passing a null field gives the discrete RNN/LSTM unrolling.

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "lode/errors.hpp"
#include "lode/numcore.hpp"
#include "lode/odesolve.hpp"
#include "lode/params.hpp"
#include "lode/sequence.hpp"

namespace lode {

struct RnnCellParams {
  Matrix w_input;     // n x d
  Matrix w_feedback;  // n x n
  Vector b;           // n
  Activation activation = Activation::Tanh;

  std::size_t hidden_dim() const { return w_feedback.rows(); }
  std::size_t input_dim() const { return w_input.cols(); }

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f(std::string("w_input"), self.w_input);
    f(std::string("w_feedback"), self.w_feedback);
    f(std::string("b"), self.b);
  }
};

inline RnnCellParams make_rnn_cell(std::size_t input_dim, std::size_t hidden,
                                   Activation act = Activation::Tanh) {
  return RnnCellParams{Matrix(hidden, input_dim), Matrix(hidden, hidden), Vector(hidden), act};
}

inline RnnCellParams make_rnn_cell(std::size_t input_dim, std::size_t hidden, Rng& rng,
                                   Activation act = Activation::Tanh) {
  RnnCellParams p = make_rnn_cell(input_dim, hidden, act);
  const std::size_t fan_in = input_dim + hidden;
  init_uniform(p.w_input.values(), rng, fan_in);
  init_uniform(p.w_feedback.values(), rng, fan_in);
  init_uniform(p.b.values(), rng, fan_in);
  return p;
}

struct LstmCellParams {
  Matrix w_xin, w_xf, w_xo, w_xc;  // n x d
  Matrix w_hin, w_hf, w_ho, w_hc;  // n x n
  Vector b_in, b_f, b_o, b_c;      // n

  std::size_t hidden_dim() const { return w_hin.rows(); }
  std::size_t input_dim() const { return w_xin.cols(); }

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f(std::string("w_xin"), self.w_xin);
    f(std::string("w_xf"), self.w_xf);
    f(std::string("w_xo"), self.w_xo);
    f(std::string("w_xc"), self.w_xc);
    f(std::string("w_hin"), self.w_hin);
    f(std::string("w_hf"), self.w_hf);
    f(std::string("w_ho"), self.w_ho);
    f(std::string("w_hc"), self.w_hc);
    f(std::string("b_in"), self.b_in);
    f(std::string("b_f"), self.b_f);
    f(std::string("b_o"), self.b_o);
    f(std::string("b_c"), self.b_c);
  }
};

inline LstmCellParams make_lstm_cell(std::size_t input_dim, std::size_t hidden) {
  const Matrix wx(hidden, input_dim), wh(hidden, hidden);
  const Vector b(hidden);
  return LstmCellParams{wx, wx, wx, wx, wh, wh, wh, wh, b, b, b, b};
}

inline LstmCellParams make_lstm_cell(std::size_t input_dim, std::size_t hidden, Rng& rng) {
  LstmCellParams p = make_lstm_cell(input_dim, hidden);
  const std::size_t fan_in = input_dim + hidden;
  for (auto& block : param_blocks(p)) init_uniform(block.values, rng, fan_in);
  return p;
}

struct CellState {
  Vector h;
  Vector c;

  static CellState zeros(std::size_t n) { return {Vector(n), Vector(n)}; }
};

namespace detail {

inline void check_cell_input(std::size_t hidden, std::size_t input_dim, const Vector& h,
                             const Vector& x, const char* who) {
  if (h.size() != hidden || x.size() != input_dim) {
    throw ShapeError(std::string(who) + ": cell expects h[" + std::to_string(hidden) + "], x[" +
                     std::to_string(input_dim) + "], got h[" + std::to_string(h.size()) +
                     "], x[" + std::to_string(x.size()) + "]");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Single-step cells

/// h = act(w_feedback h_prev + w_input x + b)
inline Vector rnn_cell(const RnnCellParams& p, const Vector& h_prev, const Vector& x) {
  detail::check_cell_input(p.hidden_dim(), p.input_dim(), h_prev, x, "rnn_cell");
  Vector pre = p.b;
  matvec_acc(pre, p.w_feedback, h_prev);
  matvec_acc(pre, p.w_input, x);
  for (double& v : pre) v = activate(p.activation, v);
  return pre;
}

/// Reverse of rnn_cell given its output `h`; returns the cotangent on h_prev.
inline Vector rnn_cell_backward(const RnnCellParams& p, const Vector& h_prev, const Vector& x,
                                const Vector& h, const Vector& cot_h, RnnCellParams& grad) {
  Vector dpre(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    dpre[i] = cot_h[i] * activate_deriv_from_output(p.activation, h[i]);
  }
  outer_acc(grad.w_input, dpre, x);
  outer_acc(grad.w_feedback, dpre, h_prev);
  grad.b += dpre;
  return matvec_t(p.w_feedback, dpre);
}

/// Gate activations of one LSTM step.
struct LstmGates {
  Vector in, forget, out, cand;
};

inline LstmGates lstm_gates(const LstmCellParams& p, const Vector& h, const Vector& x) {
  auto gate = [&](const Matrix& wx, const Matrix& wh, const Vector& b, Activation a) {
    Vector z = b;
    matvec_acc(z, wx, x);
    matvec_acc(z, wh, h);
    for (double& v : z) v = activate(a, v);
    return z;
  };
  return LstmGates{gate(p.w_xin, p.w_hin, p.b_in, Activation::Sigmoid),
                   gate(p.w_xf, p.w_hf, p.b_f, Activation::Sigmoid),
                   gate(p.w_xo, p.w_ho, p.b_o, Activation::Sigmoid),
                   gate(p.w_xc, p.w_hc, p.b_c, Activation::Tanh)};
}

/// (C, h) = LSTMCell(C_prev, h_prev, x). `gates` receives the gate values when given.
inline CellState lstm_cell(const LstmCellParams& p, const CellState& state, const Vector& x,
                           LstmGates* gates = nullptr) {
  detail::check_cell_input(p.hidden_dim(), p.input_dim(), state.h, x, "lstm_cell");
  if (state.c.size() != p.hidden_dim()) throw ShapeError("lstm_cell: cell state length mismatch");
  LstmGates g = lstm_gates(p, state.h, x);
  const std::size_t n = p.hidden_dim();
  CellState next{Vector(n), Vector(n)};
  for (std::size_t i = 0; i < n; ++i) {
    next.c[i] = g.forget[i] * state.c[i] + g.in[i] * g.cand[i];
    next.h[i] = g.out[i] * std::tanh(next.c[i]);
  }
  if (gates) *gates = std::move(g);
  return next;
}

struct LstmStepCotangent {
  Vector h_prev;
  Vector c_prev;
  /// Total cotangent on the step's own C (direct plus through h = O tanh C).
  Vector c_total;
};

inline LstmStepCotangent lstm_cell_backward(const LstmCellParams& p, const CellState& prev,
                                            const Vector& x, const LstmGates& g,
                                            const Vector& c, const Vector& cot_h,
                                            const Vector& cot_c, LstmCellParams& grad) {
  const std::size_t n = p.hidden_dim();
  Vector dzi(n), dzf(n), dzo(n), dzc(n), dc(n), dc_prev(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double tc = std::tanh(c[i]);
    const double d_out = cot_h[i] * tc;
    dc[i] = cot_c[i] + cot_h[i] * g.out[i] * (1.0 - tc * tc);
    const double d_forget = dc[i] * prev.c[i];
    const double d_in = dc[i] * g.cand[i];
    const double d_cand = dc[i] * g.in[i];
    dc_prev[i] = dc[i] * g.forget[i];
    dzi[i] = d_in * g.in[i] * (1.0 - g.in[i]);
    dzf[i] = d_forget * g.forget[i] * (1.0 - g.forget[i]);
    dzo[i] = d_out * g.out[i] * (1.0 - g.out[i]);
    dzc[i] = d_cand * (1.0 - g.cand[i] * g.cand[i]);
  }
  outer_acc(grad.w_xin, dzi, x);
  outer_acc(grad.w_xf, dzf, x);
  outer_acc(grad.w_xo, dzo, x);
  outer_acc(grad.w_xc, dzc, x);
  outer_acc(grad.w_hin, dzi, prev.h);
  outer_acc(grad.w_hf, dzf, prev.h);
  outer_acc(grad.w_ho, dzo, prev.h);
  outer_acc(grad.w_hc, dzc, prev.h);
  grad.b_in += dzi;
  grad.b_f += dzf;
  grad.b_o += dzo;
  grad.b_c += dzc;
  Vector dh(n);
  matvec_t_acc(dh, p.w_hin, dzi);
  matvec_t_acc(dh, p.w_hf, dzf);
  matvec_t_acc(dh, p.w_ho, dzo);
  matvec_t_acc(dh, p.w_hc, dzc);
  return {std::move(dh), std::move(dc_prev), std::move(dc)};
}

// ---------------------------------------------------------------------------
// Continuous-time encoders

struct EncodeOptions {
  /// Process the sequence from the last observation to the first.
  bool reverse = false;
  /// Fixed RK4 steps per inter-observation gap.
  std::size_t steps_per_gap = 4;
};

struct RnnStepRecord {
  Vector x;
  Vector h_prime;
  Vector h;
  SolveTape solve;
};

struct LstmStepRecord {
  Vector x;
  Vector h_prime;
  Vector c_prev;
  LstmGates gates;
  Vector c;
  Vector h;
  SolveTape solve;
};

template <class Record>
struct EncoderTape {
  CellState initial;
  std::vector<Record> steps;
};

using RnnTape = EncoderTape<RnnStepRecord>;
using LstmTape = EncoderTape<LstmStepRecord>;

template <class Tape>
struct Encoding {
  /// Hidden state after each step, in processing order.
  std::vector<Vector> outputs;
  CellState final_state;
  Tape tape;

  const Vector& h_final() const { return final_state.h; }
};

namespace detail {

inline std::vector<std::size_t> processing_order(const TimedSequence& seq, bool reverse) {
  if (seq.empty()) throw SpecError("encoder: sequence must be nonempty");
  std::vector<std::size_t> order(seq.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = reverse ? order.size() - 1 - i : i;
  return order;
}

/// h' for one step. The first processed observation sees a zero-length span.
template <class F>
Vector evolve_hidden(const F* field, const Vector& h, double t_from, double t_to,
                     std::size_t steps, SolveTape& tape) {
  if (!field) return h;
  return integrate_fixed(*field, h, t_from, t_to, steps, &tape);
}

inline CellState initial_state(std::size_t n, const CellState* init) {
  if (!init) return CellState::zeros(n);
  if (init->h.size() != n || init->c.size() != n) {
    throw ShapeError("encoder: initial state length mismatch (expected " + std::to_string(n) + ")");
  }
  return *init;
}

}  // namespace detail

/// ODE-RNN encoder (plain RNN unrolling when `field` is null).
template <DifferentiableField F>
Encoding<RnnTape> ode_rnn_encode(const RnnCellParams& p, const F* field, const TimedSequence& seq,
                                 const EncodeOptions& opt = {}, const CellState* init = nullptr) {
  const auto order = detail::processing_order(seq, opt.reverse);
  const std::size_t n = p.hidden_dim();
  if (field && field->arity() != n) throw ShapeError("ode_rnn_encode: field arity != hidden size");
  Encoding<RnnTape> enc;
  enc.tape.initial = detail::initial_state(n, init);
  enc.tape.steps.reserve(order.size());
  Vector h = enc.tape.initial.h;
  double t_prev = seq.t[order.front()];
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t i = order[k];
    RnnStepRecord rec;
    rec.x = seq.x[i];
    try {
      rec.h_prime = detail::evolve_hidden(field, h, t_prev, seq.t[i], opt.steps_per_gap, rec.solve);
    } catch (const DivergenceError&) {
      throw DivergenceError("ode_rnn_encode: solver diverged", k);
    }
    rec.h = rnn_cell(p, rec.h_prime, rec.x);
    h = rec.h;
    t_prev = seq.t[i];
    enc.outputs.push_back(rec.h);
    enc.tape.steps.push_back(std::move(rec));
  }
  enc.final_state = CellState{h, Vector(n)};
  return enc;
}

/// ODE-LSTM encoder (plain LSTM unrolling when `field` is null).
template <DifferentiableField F>
Encoding<LstmTape> ode_lstm_encode(const LstmCellParams& p, const F* field,
                                   const TimedSequence& seq, const EncodeOptions& opt = {},
                                   const CellState* init = nullptr) {
  const auto order = detail::processing_order(seq, opt.reverse);
  const std::size_t n = p.hidden_dim();
  if (field && field->arity() != n) throw ShapeError("ode_lstm_encode: field arity != hidden size");
  Encoding<LstmTape> enc;
  enc.tape.initial = detail::initial_state(n, init);
  enc.tape.steps.reserve(order.size());
  CellState state = enc.tape.initial;
  double t_prev = seq.t[order.front()];
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t i = order[k];
    LstmStepRecord rec;
    rec.x = seq.x[i];
    try {
      rec.h_prime =
          detail::evolve_hidden(field, state.h, t_prev, seq.t[i], opt.steps_per_gap, rec.solve);
    } catch (const DivergenceError&) {
      throw DivergenceError("ode_lstm_encode: solver diverged", k);
    }
    rec.c_prev = state.c;
    state = lstm_cell(p, CellState{rec.h_prime, rec.c_prev}, rec.x, &rec.gates);
    rec.c = state.c;
    rec.h = state.h;
    t_prev = seq.t[i];
    enc.outputs.push_back(rec.h);
    enc.tape.steps.push_back(std::move(rec));
  }
  enc.final_state = state;
  return enc;
}

/// Plain discrete unrolling, h_0 = C_0 = 0.
inline Encoding<RnnTape> rnn_unroll(const RnnCellParams& p, const TimedSequence& seq,
                                    bool reverse = false) {
  return ode_rnn_encode<NeuralField>(p, nullptr, seq, EncodeOptions{reverse, 1});
}

inline Encoding<LstmTape> lstm_unroll(const LstmCellParams& p, const TimedSequence& seq,
                                      bool reverse = false) {
  return ode_lstm_encode<NeuralField>(p, nullptr, seq, EncodeOptions{reverse, 1});
}

/// Cotangents flowing into an encoder run. Empty members mean zero.
struct EncoderCotangent {
  /// One per output, in processing order.
  std::vector<Vector> outputs;
  Vector final_h;
  Vector final_c;
};

template <class CellParams, class FieldGrad>
struct EncoderGrads {
  CellParams cell;
  FieldGrad field;
  Vector cot_h0;
  Vector cot_c0;
  /// Total cotangent on the state after k processed steps (k = 0 is the initial state).
  std::vector<Vector> cot_h;
  std::vector<Vector> cot_c;
};

namespace detail {

inline Vector cotangent_seed(const EncoderCotangent& cot, std::size_t steps, std::size_t n) {
  if (!cot.outputs.empty() && cot.outputs.size() != steps) {
    throw ShapeError("encoder backward: " + std::to_string(cot.outputs.size()) +
                     " output cotangents for " + std::to_string(steps) + " steps");
  }
  for (const auto& v : cot.outputs) {
    if (v.size() != n) throw ShapeError("encoder backward: output cotangent length mismatch");
  }
  if (!cot.final_h.empty() && cot.final_h.size() != n) {
    throw ShapeError("encoder backward: final_h cotangent length mismatch");
  }
  if (!cot.final_c.empty() && cot.final_c.size() != n) {
    throw ShapeError("encoder backward: final_c cotangent length mismatch");
  }
  return cot.final_h.empty() ? Vector(n) : cot.final_h;
}

}  // namespace detail

/// Reverse accumulation through an ODE-RNN (or RNN) run.
template <DifferentiableField F>
EncoderGrads<RnnCellParams, typename F::Grad> cell_backward(const RnnCellParams& p, const F* field,
                                                            const RnnTape& tape,
                                                            const EncoderCotangent& cot) {
  const std::size_t n = p.hidden_dim();
  const std::size_t steps = tape.steps.size();
  EncoderGrads<RnnCellParams, typename F::Grad> g;
  g.cell = zeros_like(p);
  if (field) g.field = field->zero_grad();
  g.cot_h.assign(steps + 1, Vector(n));

  Vector cot_h = detail::cotangent_seed(cot, steps, n);
  for (std::size_t k = steps; k-- > 0;) {
    const RnnStepRecord& r = tape.steps[k];
    if (!cot.outputs.empty()) cot_h += cot.outputs[k];
    g.cot_h[k + 1] = cot_h;
    const Vector cot_hp = rnn_cell_backward(p, r.h_prime, r.x, r.h, cot_h, g.cell);
    cot_h = (field && !r.solve.empty()) ? r.solve.backward(*field, cot_hp, g.field) : cot_hp;
  }
  g.cot_h[0] = cot_h;
  g.cot_h0 = cot_h;
  g.cot_c0 = Vector(n);
  return g;
}

/// Reverse accumulation through an ODE-LSTM (or LSTM) run.
template <DifferentiableField F>
EncoderGrads<LstmCellParams, typename F::Grad> cell_backward(const LstmCellParams& p,
                                                             const F* field, const LstmTape& tape,
                                                             const EncoderCotangent& cot) {
  const std::size_t n = p.hidden_dim();
  const std::size_t steps = tape.steps.size();
  EncoderGrads<LstmCellParams, typename F::Grad> g;
  g.cell = zeros_like(p);
  if (field) g.field = field->zero_grad();
  g.cot_h.assign(steps + 1, Vector(n));
  g.cot_c.assign(steps + 1, Vector(n));

  Vector cot_h = detail::cotangent_seed(cot, steps, n);
  Vector cot_c = cot.final_c.empty() ? Vector(n) : cot.final_c;
  for (std::size_t k = steps; k-- > 0;) {
    const LstmStepRecord& r = tape.steps[k];
    if (!cot.outputs.empty()) cot_h += cot.outputs[k];
    g.cot_h[k + 1] = cot_h;
    LstmStepCotangent sc = lstm_cell_backward(p, CellState{r.h_prime, r.c_prev}, r.x, r.gates,
                                              r.c, cot_h, cot_c, g.cell);
    g.cot_c[k + 1] = std::move(sc.c_total);
    cot_c = std::move(sc.c_prev);
    cot_h = (field && !r.solve.empty()) ? r.solve.backward(*field, sc.h_prev, g.field)
                                        : std::move(sc.h_prev);
  }
  g.cot_h[0] = cot_h;
  g.cot_c[0] = cot_c;
  g.cot_h0 = cot_h;
  g.cot_c0 = cot_c;
  return g;
}

}  // namespace lode
