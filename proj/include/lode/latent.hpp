#pragma once

// Latent ODE models: a recurrent encoder run backwards over the observations
// yields z'_0; the translator g maps it to (mu, log sigma); z_0 = mu + sigma * eps
// seeds a Neural ODE in latent space whose states pass through an output network.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "lode/cells.hpp"
#include "lode/errors.hpp"
#include "lode/numcore.hpp"
#include "lode/odesolve.hpp"
#include "lode/params.hpp"
#include "lode/sequence.hpp"

namespace lode {

enum class EncoderKind { OdeRnn, OdeLstm };

inline std::string to_string(EncoderKind k) { return k == EncoderKind::OdeRnn ? "ode-rnn" : "ode-lstm"; }

enum class Variant { LatentOdeRnn, LatentOdeLstm, LatentOdeLstmGc };

inline constexpr Variant kAllVariants[] = {Variant::LatentOdeRnn, Variant::LatentOdeLstm,
                                           Variant::LatentOdeLstmGc};

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::LatentOdeRnn: return "latent-ode-rnn";
    case Variant::LatentOdeLstm: return "latent-ode-lstm";
    case Variant::LatentOdeLstmGc: return "latent-ode-lstm-gc";
  }
  return "?";
}

/// Display name used in tables.
inline std::string display_name(Variant v) {
  switch (v) {
    case Variant::LatentOdeRnn: return "Latent ODE-RNN";
    case Variant::LatentOdeLstm: return "Latent ODE-LSTM";
    case Variant::LatentOdeLstmGc: return "Latent ODE-LSTM+GC";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : kAllVariants)
    if (to_string(v) == s) return v;
  throw SpecError("unknown model variant '" + s +
                  "' (expected latent-ode-rnn, latent-ode-lstm or latent-ode-lstm-gc)");
}

inline EncoderKind encoder_kind(Variant v) {
  return v == Variant::LatentOdeRnn ? EncoderKind::OdeRnn : EncoderKind::OdeLstm;
}

inline bool uses_clipping(Variant v) { return v == Variant::LatentOdeLstmGc; }

struct ModelDims {
  std::size_t input_dim = 2;         // d
  std::size_t hidden_dim = 16;       // n
  std::size_t enc_field_hidden = 16;
  std::size_t g_hidden = 16;
  std::size_t latent_dim = 4;        // l
  std::size_t dec_field_hidden = 16;
  std::size_t out_hidden = 16;
  std::size_t output_dim = 2;        // p

  void validate() const {
    const std::size_t all[] = {input_dim,  hidden_dim,       enc_field_hidden, g_hidden,
                               latent_dim, dec_field_hidden, out_hidden,       output_dim};
    for (std::size_t v : all)
      if (v == 0) throw SpecError("ModelDims: every dimension must be >= 1");
  }
  bool operator==(const ModelDims&) const = default;
};

struct ModelOptions {
  /// RK4 steps between consecutive observations in the encoder.
  std::size_t encoder_steps = 4;
  /// RK4 steps between consecutive requested times in the decoder.
  std::size_t decoder_steps = 4;
};

using EncoderCell = std::variant<RnnCellParams, LstmCellParams>;

struct ModelParams {
  EncoderCell cell;
  MlpParams enc_field;  // n -> n
  MlpParams g;          // n -> 2l, mu lanes then log-sigma lanes
  MlpParams dec_field;  // l -> l
  MlpParams output;     // l -> p

  EncoderKind kind() const {
    return std::holds_alternative<RnnCellParams>(cell) ? EncoderKind::OdeRnn : EncoderKind::OdeLstm;
  }
  std::size_t latent_dim() const { return dec_field.output_dim(); }

  ModelDims dims() const {
    const std::size_t d = std::visit([](const auto& c) { return c.input_dim(); }, cell);
    return {d,
            enc_field.output_dim(),
            enc_field.hidden_dim(),
            g.hidden_dim(),
            dec_field.output_dim(),
            dec_field.hidden_dim(),
            output.hidden_dim(),
            output.output_dim()};
  }

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    std::visit([&](auto& c) { visit_nested("encoder.cell", c, f); }, self.cell);
    visit_nested("encoder.field", self.enc_field, f);
    visit_nested("g", self.g, f);
    visit_nested("decoder.field", self.dec_field, f);
    visit_nested("output", self.output, f);
  }
};

struct LatentModel {
  ModelParams params;
  ModelOptions options;

  EncoderKind kind() const { return params.kind(); }
  ModelDims dims() const { return params.dims(); }
};

/// All-zero parameters of the given shape.
inline LatentModel make_zero_model(EncoderKind kind, const ModelDims& d, ModelOptions opt = {}) {
  d.validate();
  EncoderCell cell = kind == EncoderKind::OdeRnn ? EncoderCell(make_rnn_cell(d.input_dim, d.hidden_dim))
                                                 : EncoderCell(make_lstm_cell(d.input_dim, d.hidden_dim));
  return LatentModel{ModelParams{std::move(cell), make_mlp(d.hidden_dim, d.enc_field_hidden, d.hidden_dim),
                                 make_mlp(d.hidden_dim, d.g_hidden, 2 * d.latent_dim),
                                 make_mlp(d.latent_dim, d.dec_field_hidden, d.latent_dim),
                                 make_mlp(d.latent_dim, d.out_hidden, d.output_dim)},
                     opt};
}

inline LatentModel make_model(EncoderKind kind, const ModelDims& d, Rng& rng, ModelOptions opt = {}) {
  d.validate();
  EncoderCell cell = kind == EncoderKind::OdeRnn ? EncoderCell(make_rnn_cell(d.input_dim, d.hidden_dim, rng))
                                                 : EncoderCell(make_lstm_cell(d.input_dim, d.hidden_dim, rng));
  return LatentModel{ModelParams{std::move(cell), make_mlp(d.hidden_dim, d.enc_field_hidden, d.hidden_dim, rng),
                                 make_mlp(d.hidden_dim, d.g_hidden, 2 * d.latent_dim, rng),
                                 make_mlp(d.latent_dim, d.dec_field_hidden, d.latent_dim, rng),
                                 make_mlp(d.latent_dim, d.out_hidden, d.output_dim, rng)},
                     opt};
}

// ---------------------------------------------------------------------------
// Encoder

struct LatentPath {
  Vector mu;
  Vector log_sigma;
  Vector sigma;
  Vector eps;
  Vector z0;
};

using EncoderRun = std::variant<Encoding<RnnTape>, Encoding<LstmTape>>;

struct EncodeTape {
  EncoderRun run;
  /// z'_0: the encoder's hidden state after consuming the first observation.
  Vector z_prime;
  LatentPath path;
};

/// Runs the encoder backwards over `seq` and returns z'_0 with its tape.
inline EncoderRun run_encoder(const LatentModel& m, const TimedSequence& seq) {
  if (seq.empty()) throw SpecError("encode: sequence must be nonempty");
  if (seq.dim() != m.dims().input_dim) {
    throw ShapeError("encode: observations have dimension " + std::to_string(seq.dim()) +
                     ", model expects " + std::to_string(m.dims().input_dim));
  }
  const NeuralField f(m.params.enc_field);
  const EncodeOptions opt{true, m.options.encoder_steps};
  if (const auto* rnn = std::get_if<RnnCellParams>(&m.params.cell)) {
    return ode_rnn_encode(*rnn, &f, seq, opt);
  }
  return ode_lstm_encode(std::get<LstmCellParams>(m.params.cell), &f, seq, opt);
}

inline const Vector& encoder_output(const EncoderRun& run) {
  return std::visit([](const auto& e) -> const Vector& { return e.h_final(); }, run);
}

/// mu, sigma = g(z'_0); z_0 = mu + sigma * eps.
inline LatentPath latent_head(const LatentModel& m, const Vector& z_prime, const Vector& eps) {
  const std::size_t l = m.params.latent_dim();
  if (eps.size() != l) throw ShapeError("latent_head: eps length " + std::to_string(eps.size()) +
                                        " vs latent dim " + std::to_string(l));
  const Vector out = mlp_forward(m.params.g, z_prime);
  LatentPath p{Vector(l), Vector(l), Vector(l), eps, Vector(l)};
  for (std::size_t i = 0; i < l; ++i) {
    p.mu[i] = out[i];
    p.log_sigma[i] = out[l + i];
    p.sigma[i] = std::exp(p.log_sigma[i]);
    p.z0[i] = p.mu[i] + p.sigma[i] * eps[i];
  }
  return p;
}

inline EncodeTape encode(const LatentModel& m, const TimedSequence& seq, const Vector& eps) {
  EncodeTape t{run_encoder(m, seq), {}, {}};
  t.z_prime = encoder_output(t.run);
  t.path = latent_head(m, t.z_prime, eps);
  return t;
}

/// Draws eps ~ N(0, I) once for the whole sequence.
inline EncodeTape encode(const LatentModel& m, const TimedSequence& seq, Rng& rng) {
  return encode(m, seq, gaussian(rng, m.params.latent_dim()));
}

// ---------------------------------------------------------------------------
// Decoder

/// Latent states at the requested times, solved outward from the anchor time
/// of z_0: times at or after the anchor in one forward chain, earlier times in
/// one backward chain.
struct DecodeTape {
  double anchor = 0.0;
  std::vector<Vector> states;
  struct Chain {
    std::vector<std::size_t> index;
    std::vector<SolveTape> solves;
  };
  Chain forward_chain;
  Chain backward_chain;
};

namespace detail {

inline void check_times(const std::vector<double>& times) {
  if (times.empty()) throw SpecError("decode: times must be nonempty");
  if (times.size() < 2) return;
  const bool increasing = times[1] > times[0];
  for (std::size_t i = 1; i < times.size(); ++i) {
    const bool ok = increasing ? times[i] > times[i - 1] : times[i] < times[i - 1];
    if (!ok) throw SpecError("decode: times must be strictly monotone (index " + std::to_string(i) + ")");
  }
}

}  // namespace detail

inline DecodeTape decode_latent(const LatentModel& m, const Vector& z0, double anchor,
                                const std::vector<double>& times, bool record = true) {
  detail::check_times(times);
  if (z0.size() != m.params.latent_dim()) throw ShapeError("decode: z0 length mismatch");
  DecodeTape tape;
  tape.anchor = anchor;
  tape.states.assign(times.size(), Vector{});
  std::vector<std::size_t> order(times.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
  for (std::size_t i : order)
    if (times[i] >= anchor) tape.forward_chain.index.push_back(i);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if (times[*it] < anchor) tape.backward_chain.index.push_back(*it);

  const NeuralField f(m.params.dec_field);
  std::size_t segment = 0;
  for (DecodeTape::Chain* chain : {&tape.forward_chain, &tape.backward_chain}) {
    Vector z = z0;
    double t = anchor;
    for (std::size_t i : chain->index) {
      chain->solves.emplace_back();
      try {
        z = integrate_fixed(f, z, t, times[i], m.options.decoder_steps,
                            record ? &chain->solves.back() : nullptr);
      } catch (const DivergenceError&) {
        throw DivergenceError("decode: latent solve diverged", segment);
      }
      ++segment;
      t = times[i];
      tape.states[i] = z;
    }
  }
  return tape;
}

inline std::vector<Vector> apply_output(const LatentModel& m, const std::vector<Vector>& states) {
  std::vector<Vector> out;
  out.reserve(states.size());
  for (const auto& z : states) out.push_back(mlp_forward(m.params.output, z));
  return out;
}

/// Predictions at `times` from z_0 anchored at `anchor`.
inline std::vector<Vector> decode(const LatentModel& m, const Vector& z0, double anchor,
                                  const std::vector<double>& times) {
  return apply_output(m, decode_latent(m, z0, anchor, times, false).states);
}

/// Same as `decode` but with the adaptive Dormand-Prince solver between times.
inline std::vector<Vector> decode_adaptive(const LatentModel& m, const Vector& z0, double anchor,
                                           const std::vector<double>& times, double rtol = 1e-6,
                                           double atol = 1e-8) {
  const DecodeTape shape = decode_latent(m, z0, anchor, times, false);
  const NeuralField f(m.params.dec_field);
  std::vector<Vector> states(times.size());
  for (const auto* chain : {&shape.forward_chain, &shape.backward_chain}) {
    Vector z = z0;
    double t = anchor;
    for (std::size_t i : chain->index) {
      if (times[i] != t) z = dopri5_solve(f, z, AdaptiveSpan{t, times[i], rtol, atol}).final_state();
      t = times[i];
      states[i] = z;
    }
  }
  return apply_output(m, states);
}

// ---------------------------------------------------------------------------
// End to end

struct ForwardTape {
  EncodeTape enc;
  DecodeTape dec;
  std::vector<Vector> predictions;

  const LatentPath& path() const { return enc.path; }
};

/// Encodes `seq`, anchors z_0 at its first observation time, and predicts at `times`.
inline ForwardTape forward(const LatentModel& m, const TimedSequence& seq,
                           const std::vector<double>& times, const Vector& eps) {
  ForwardTape t{encode(m, seq, eps), {}, {}};
  t.dec = decode_latent(m, t.enc.path.z0, seq.t.front(), times);
  t.predictions = apply_output(m, t.dec.states);
  return t;
}

inline ForwardTape forward(const LatentModel& m, const TimedSequence& seq,
                           const std::vector<double>& times, Rng& rng) {
  return forward(m, seq, times, gaussian(rng, m.params.latent_dim()));
}

/// Cotangents of a scalar loss with respect to the forward outputs. Empty
/// mu/log_sigma members mean zero.
struct LossCotangent {
  std::vector<Vector> predictions;
  Vector mu;
  Vector log_sigma;
};

/// Backpropagates (dL/dmu, dL/dlog_sigma) through g and the encoder into `grad`.
inline void encoder_backward(const LatentModel& m, const EncodeTape& tape, const Vector& cot_mu,
                             const Vector& cot_log_sigma, ModelParams& grad) {
  const std::size_t l = m.params.latent_dim();
  if (cot_mu.size() != l || cot_log_sigma.size() != l) {
    throw ShapeError("encoder_backward: cotangent length mismatch");
  }
  Vector cot_g(2 * l);
  for (std::size_t i = 0; i < l; ++i) {
    cot_g[i] = cot_mu[i];
    cot_g[l + i] = cot_log_sigma[i];
  }
  const Vector cot_zp = mlp_backward(m.params.g, tape.z_prime, cot_g, grad.g);
  const NeuralField f(m.params.enc_field);
  const EncoderCotangent cot{{}, cot_zp, {}};
  std::visit(
      [&](const auto& run) {
        using Run = std::decay_t<decltype(run)>;
        using Cell = std::conditional_t<std::is_same_v<Run, Encoding<RnnTape>>, RnnCellParams,
                                        LstmCellParams>;
        const auto g = cell_backward(std::get<Cell>(m.params.cell), &f, run.tape, cot);
        add_scaled(std::get<Cell>(grad.cell), g.cell, 1.0);
        add_scaled(grad.enc_field, g.field, 1.0);
      },
      tape.run);
}

/// Cotangent on z_0 from cotangents on the decoder's predictions; accumulates
/// decoder and output-network gradients into `grad`.
inline Vector decoder_backward(const LatentModel& m, const DecodeTape& tape,
                               const std::vector<Vector>& cot_predictions, ModelParams& grad) {
  if (cot_predictions.size() != tape.states.size()) {
    throw ShapeError("decoder_backward: " + std::to_string(cot_predictions.size()) +
                     " cotangents for " + std::to_string(tape.states.size()) + " predictions");
  }
  std::vector<Vector> cot_state(tape.states.size());
  for (std::size_t i = 0; i < cot_state.size(); ++i) {
    cot_state[i] = mlp_backward(m.params.output, tape.states[i], cot_predictions[i], grad.output);
  }
  const NeuralField f(m.params.dec_field);
  Vector cot_z0(m.params.latent_dim());
  for (const auto* chain : {&tape.forward_chain, &tape.backward_chain}) {
    Vector carry(cot_z0.size());
    for (std::size_t j = chain->index.size(); j-- > 0;) {
      carry += cot_state[chain->index[j]];
      if (!chain->solves[j].empty()) carry = chain->solves[j].backward(f, carry, grad.dec_field);
    }
    cot_z0 += carry;
  }
  return cot_z0;
}

/// Exact reverse-mode gradient over every model parameter.
inline ModelParams model_backward(const LatentModel& m, const ForwardTape& tape,
                                  const LossCotangent& cot) {
  const std::size_t l = m.params.latent_dim();
  ModelParams grad = zeros_like(m.params);
  const Vector cot_z0 = decoder_backward(m, tape.dec, cot.predictions, grad);
  const LatentPath& p = tape.enc.path;
  Vector cot_mu = cot_z0, cot_ls(l);
  for (std::size_t i = 0; i < l; ++i) cot_ls[i] = cot_z0[i] * p.eps[i] * p.sigma[i];
  if (!cot.mu.empty()) cot_mu += cot.mu;
  if (!cot.log_sigma.empty()) cot_ls += cot.log_sigma;
  encoder_backward(m, tape.enc, cot_mu, cot_ls, grad);
  return grad;
}

}  // namespace lode
