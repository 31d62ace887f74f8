#pragma once

// Empirical Jacobian-chain norms ||dh_N/dh_k|| for recurrent cells.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lode/cells.hpp"
#include "lode/errors.hpp"
#include "lode/numcore.hpp"

namespace lode {

enum class ProbeCell { Rnn, Lstm, OdeRnn, OdeLstm };

inline std::string to_string(ProbeCell c) {
  switch (c) {
    case ProbeCell::Rnn: return "rnn";
    case ProbeCell::Lstm: return "lstm";
    case ProbeCell::OdeRnn: return "ode-rnn";
    case ProbeCell::OdeLstm: return "ode-lstm";
  }
  return "?";
}

inline ProbeCell parse_probe_cell(const std::string& s) {
  for (ProbeCell c : {ProbeCell::Rnn, ProbeCell::Lstm, ProbeCell::OdeRnn, ProbeCell::OdeLstm})
    if (to_string(c) == s) return c;
  throw SpecError("unknown cell type '" + s + "' (expected rnn, lstm, ode-rnn or ode-lstm)");
}

inline bool is_lstm(ProbeCell c) { return c == ProbeCell::Lstm || c == ProbeCell::OdeLstm; }

struct ProbeConfig {
  ProbeCell cell = ProbeCell::Rnn;
  /// Target spectral radius of the recurrent weight matrices.
  double scale = 1.0;
  std::size_t length = 50;
  std::size_t hidden = 8;
  std::size_t input_dim = 2;
  /// Input magnitude; 0 keeps the chain at the linear operating point h = 0.
  double input_scale = 0.0;
  /// Saturate forget (open) and input (closed) gates of an LSTM.
  bool carousel = false;
  std::uint64_t seed = 0;
};

enum class Regime { Vanishing, Stable, Exploding, Undefined };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::Vanishing: return "vanishing";
    case Regime::Stable: return "stable";
    case Regime::Exploding: return "exploding";
    case Regime::Undefined: return "undefined";
  }
  return "?";
}

inline constexpr double kRegimeDeadBand = 0.01;

inline Regime classify_slope(std::optional<double> slope) {
  if (!slope) return Regime::Undefined;
  if (*slope < -kRegimeDeadBand) return Regime::Vanishing;
  if (*slope > kRegimeDeadBand) return Regime::Exploding;
  return Regime::Stable;
}

struct GradReport {
  ProbeConfig config;
  /// norms[k] = ||dS_N/dS_k||_2 for k = 0..N, with S = h (RNN) or C (LSTM).
  std::vector<double> norms;
  /// Least-squares slope of log norm against N - k; empty with fewer than 3 points.
  std::optional<double> slope;
  Regime regime = Regime::Undefined;
  double spectral_radius = 0.0;
  double operator_norm = 0.0;
  /// log(gamma * rho) and log(gamma * ||W||) with gamma = max |tanh'| = 1;
  /// W is the feedback matrix (RNN) or the candidate recurrence (LSTM).
  double bound_slope_radius = 0.0;
  double bound_slope_norm = 0.0;

  std::string csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "k,norm\n";
    for (std::size_t k = 0; k < norms.size(); ++k) os << k << ',' << norms[k] << '\n';
    os << "# slope=" << (slope ? std::to_string(*slope) : std::string("undefined"))
       << " regime=" << to_string(regime) << " spectral_radius=" << spectral_radius
       << " operator_norm=" << operator_norm << '\n';
    return os.str();
  }
};

/// Least-squares slope of y on x; empty with fewer than 3 points.
inline std::optional<double> fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeError("fit_slope: length mismatch");
  const double n = static_cast<double>(x.size());
  if (x.size() < 3) return std::nullopt;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double den = n * sxx - sx * sx;
  if (den == 0.0) return std::nullopt;
  return (n * sxy - sx * sy) / den;
}

namespace detail {

inline void scale_to_radius(Matrix& w, double target) {
  const double rho = spectral_radius_est(w, 500);
  if (rho > 0.0) w *= target / rho;
}

/// Rows of dS_N/dS_k for every k, assembled from one backward pass per basis cotangent.
template <class Cell, class Run, class Field>
std::vector<Matrix> chain_jacobians(const Cell& p, const Field* field, const Run& run, bool c_path,
                                    std::size_t n, std::size_t steps) {
  std::vector<Matrix> jac(steps + 1, Matrix(n, n));
  for (std::size_t r = 0; r < n; ++r) {
    EncoderCotangent cot;
    Vector e(n);
    e[r] = 1.0;
    (c_path ? cot.final_c : cot.final_h) = e;
    const auto g = cell_backward(p, field, run.tape, cot);
    const auto& rows = c_path ? g.cot_c : g.cot_h;
    for (std::size_t k = 0; k <= steps; ++k)
      for (std::size_t c = 0; c < n; ++c) jac[k](r, c) = rows[k][c];
  }
  return jac;
}

}  // namespace detail

/// Builds a cell chain with recurrent weights scaled to spectral radius
/// `scale`, runs it over N steps at unit time spacing, and measures the
/// Jacobian-chain norms. LSTM cells report the cell-state path dC_N/dC_k.
inline GradReport grad_flow_probe(const ProbeConfig& cfg) {
  if (cfg.length == 0 || cfg.hidden == 0 || cfg.input_dim == 0) {
    throw SpecError("grad_flow_probe: length, hidden and input_dim must be >= 1");
  }
  Rng rng(cfg.seed);
  const std::size_t n = cfg.hidden, N = cfg.length;
  TimedSequence seq;
  for (std::size_t i = 0; i < N; ++i) {
    Vector x = gaussian(rng, cfg.input_dim);
    x *= cfg.input_scale;
    seq.push_back(std::move(x), static_cast<double>(i));
  }
  const bool ode = cfg.cell == ProbeCell::OdeRnn || cfg.cell == ProbeCell::OdeLstm;
  MlpParams field_params = make_mlp(n, n, n, rng);
  scale_params(field_params, 0.1);
  field_params.b1 = Vector(n);
  field_params.b2 = Vector(n);
  const NeuralField field(field_params);
  const NeuralField* fp = ode ? &field : nullptr;
  const EncodeOptions opt{false, 4};

  GradReport rep;
  rep.config = cfg;
  std::vector<Matrix> jac;
  Matrix w;
  const double gamma = 1.0;  // max |tanh'|
  if (!is_lstm(cfg.cell)) {
    RnnCellParams p = make_rnn_cell(cfg.input_dim, n, rng);
    p.b = Vector(n);
    detail::scale_to_radius(p.w_feedback, cfg.scale);
    w = p.w_feedback;
    const auto run = ode_rnn_encode(p, fp, seq, opt);
    jac = detail::chain_jacobians(p, fp, run, false, n, N);
  } else {
    LstmCellParams p = make_lstm_cell(cfg.input_dim, n, rng);
    for (Vector* b : {&p.b_in, &p.b_f, &p.b_o, &p.b_c}) *b = Vector(n);
    for (Matrix* m : {&p.w_hin, &p.w_hf, &p.w_ho, &p.w_hc}) detail::scale_to_radius(*m, cfg.scale);
    if (cfg.carousel) {
      p.b_f = Vector(n, 30.0);
      p.b_in = Vector(n, -30.0);
    }
    w = p.w_hc;
    const auto run = ode_lstm_encode(p, fp, seq, opt);
    jac = detail::chain_jacobians(p, fp, run, true, n, N);
  }

  rep.spectral_radius = spectral_radius_est(w, 500);
  rep.operator_norm = operator_norm_est(w, 500);
  rep.bound_slope_radius = std::log(gamma * rep.spectral_radius);
  rep.bound_slope_norm = std::log(gamma * rep.operator_norm);
  std::vector<double> dist, logn;
  for (std::size_t k = 0; k <= N; ++k) {
    const double v = operator_norm_est(jac[k], 100);
    rep.norms.push_back(v);
    if (v > 0.0 && std::isfinite(v)) {
      dist.push_back(static_cast<double>(N - k));
      logn.push_back(std::log(v));
    }
  }
  rep.slope = fit_slope(dist, logn);
  rep.regime = classify_slope(rep.slope);
  return rep;
}

}  // namespace lode
