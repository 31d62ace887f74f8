#pragma once

// Centered finite-difference checks of the hand-written reverse passes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lode/cells.hpp"
#include "lode/latent.hpp"
#include "lode/params.hpp"

namespace lode {

struct BlockCheck {
  std::string name;
  double rel_error = 0.0;
};

struct FdReport {
  std::string subject;
  std::vector<BlockCheck> blocks;

  double max_error() const {
    double m = 0.0;
    for (const auto& b : blocks) m = std::max(m, b.rel_error);
    return m;
  }
  bool passes(double tolerance) const { return max_error() <= tolerance; }
};

/// Norm-wise relative error ||a - b|| / max(||a|| + ||b||, floor). The floor
/// keeps blocks whose true gradient is ~0 from amplifying rounding noise.
inline double relative_error(std::span<const double> a, std::span<const double> b,
                             double floor = 1e-7) {
  double num = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(na) + std::sqrt(nb), floor);
}

/// Compares `analytic` with centered differences of `objective()` taken over
/// every entry of `params`, one relative error per block. `params` is restored.
template <class P, class Objective>
FdReport finite_diff_check(P& params, const P& analytic, Objective&& objective, double h = 1e-5) {
  FdReport rep;
  auto blocks = param_blocks(params);
  const auto grads = param_blocks(analytic);
  if (blocks.size() != grads.size()) throw ShapeError("finite_diff_check: block count mismatch");
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    std::vector<double> fd(blocks[b].values.size());
    for (std::size_t j = 0; j < fd.size(); ++j) {
      double& v = blocks[b].values[j];
      const double keep = v;
      v = keep + h;
      const double fp = objective();
      v = keep - h;
      const double fm = objective();
      v = keep;
      fd[j] = (fp - fm) / (2.0 * h);
    }
    rep.blocks.push_back({blocks[b].name, relative_error(grads[b].values, fd)});
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Standard suite: every cell type and both latent models at small sizes.

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::size_t input_dim = 2;
  std::size_t hidden = 3;
  std::size_t latent_dim = 2;
  std::size_t length = 4;
  double h = 1e-5;
};

namespace detail {

inline TimedSequence gradcheck_sequence(Rng& rng, std::size_t n, std::size_t d) {
  TimedSequence seq;
  double t = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    seq.push_back(gaussian(rng, d), t);
    t += rng.uniform(0.2, 0.8);
  }
  return seq;
}

/// Random linear functional of the outputs and final cell state.
struct EncoderProbe {
  std::vector<Vector> w;
  Vector wc;

  template <class Enc>
  double operator()(const Enc& e) const {
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += dot(w[i], e.outputs[i]);
    if (!e.final_state.c.empty() && !wc.empty()) s += dot(wc, e.final_state.c);
    return s;
  }
};

template <class Cell>
struct CellWithField {
  Cell cell;
  MlpParams field;

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    visit_nested("cell", self.cell, f);
    visit_nested("field", self.field, f);
  }
};

template <class Cell, class Encode>
FdReport check_encoder(const std::string& subject, Cell cell, bool with_field, Encode encode,
                       const GradcheckOptions& o, Rng& rng) {
  const std::size_t n = cell.hidden_dim();
  const auto seq = gradcheck_sequence(rng, o.length, o.input_dim);
  EncoderProbe probe;
  for (std::size_t i = 0; i < o.length; ++i) probe.w.push_back(gaussian(rng, n));
  constexpr bool lstm = std::is_same_v<Cell, LstmCellParams>;
  if (lstm) probe.wc = gaussian(rng, n);
  const EncodeOptions opt{false, 3};

  if (!with_field) {
    auto objective = [&] { return probe(encode(cell, static_cast<const NeuralField*>(nullptr), seq, opt)); };
    const auto run = encode(cell, static_cast<const NeuralField*>(nullptr), seq, opt);
    const auto g = cell_backward(cell, static_cast<const NeuralField*>(nullptr), run.tape,
                                 EncoderCotangent{probe.w, {}, probe.wc});
    FdReport rep = finite_diff_check(cell, g.cell, objective, o.h);
    rep.subject = subject;
    return rep;
  }
  CellWithField<Cell> params{cell, make_mlp(n, 4, n, rng)};
  auto objective = [&] {
    const NeuralField f(params.field);
    return probe(encode(params.cell, &f, seq, opt));
  };
  const NeuralField f(params.field);
  const auto run = encode(params.cell, &f, seq, opt);
  const auto g = cell_backward(params.cell, &f, run.tape, EncoderCotangent{probe.w, {}, probe.wc});
  const CellWithField<Cell> analytic{g.cell, g.field};
  FdReport rep = finite_diff_check(params, analytic, objective, o.h);
  rep.subject = subject;
  return rep;
}

}  // namespace detail

/// Finite-difference check of a latent model on one sequence with frozen noise.
/// The objective is a random linear functional of predictions, mu and log sigma.
inline FdReport check_latent_model(LatentModel model, const TimedSequence& seq,
                                   const std::vector<double>& times, const Vector& eps, Rng& rng,
                                   double h = 1e-5) {
  const std::size_t p = model.dims().output_dim, l = model.params.latent_dim();
  LossCotangent w{{}, gaussian(rng, l), gaussian(rng, l)};
  for (std::size_t i = 0; i < times.size(); ++i) w.predictions.push_back(gaussian(rng, p));
  auto value = [&](const ForwardTape& t) {
    double s = dot(w.mu, t.path().mu) + dot(w.log_sigma, t.path().log_sigma);
    for (std::size_t i = 0; i < times.size(); ++i) s += dot(w.predictions[i], t.predictions[i]);
    return s;
  };
  const ModelParams grad = model_backward(model, forward(model, seq, times, eps), w);
  auto objective = [&] { return value(forward(model, seq, times, eps)); };
  FdReport rep = finite_diff_check(model.params, grad, objective, h);
  rep.subject = to_string(model.kind() == EncoderKind::OdeRnn ? Variant::LatentOdeRnn
                                                               : Variant::LatentOdeLstm);
  return rep;
}

/// Which subjects to include in the suite.
struct GradcheckSelection {
  bool cells = true;
  bool latent_ode_rnn = true;
  bool latent_ode_lstm = true;
};

inline std::vector<FdReport> run_gradcheck_suite(const GradcheckOptions& o,
                                                 GradcheckSelection sel = {}) {
  Rng rng(o.seed);
  std::vector<FdReport> out;
  const auto rnn_enc = [](const RnnCellParams& p, const NeuralField* f, const TimedSequence& s,
                          const EncodeOptions& opt) { return ode_rnn_encode(p, f, s, opt); };
  const auto lstm_enc = [](const LstmCellParams& p, const NeuralField* f, const TimedSequence& s,
                           const EncodeOptions& opt) { return ode_lstm_encode(p, f, s, opt); };
  if (sel.cells) {
    out.push_back(detail::check_encoder("rnn-cell", make_rnn_cell(o.input_dim, o.hidden, rng), false,
                                        rnn_enc, o, rng));
    out.push_back(detail::check_encoder("lstm-cell", make_lstm_cell(o.input_dim, o.hidden, rng), false,
                                        lstm_enc, o, rng));
    out.push_back(detail::check_encoder("ode-rnn", make_rnn_cell(o.input_dim, o.hidden, rng), true,
                                        rnn_enc, o, rng));
    out.push_back(detail::check_encoder("ode-lstm", make_lstm_cell(o.input_dim, o.hidden, rng), true,
                                        lstm_enc, o, rng));
  }
  const ModelDims dims{o.input_dim, o.hidden, 4, 4, o.latent_dim, 4, 4, o.input_dim};
  for (auto [kind, on] : {std::pair{EncoderKind::OdeRnn, sel.latent_ode_rnn},
                          std::pair{EncoderKind::OdeLstm, sel.latent_ode_lstm}}) {
    if (!on) continue;
    const LatentModel m = make_model(kind, dims, rng, ModelOptions{3, 3});
    const auto seq = detail::gradcheck_sequence(rng, o.length, o.input_dim);
    std::vector<double> times{seq.t.front() - 0.5};
    times.insert(times.end(), seq.t.begin(), seq.t.end());
    times.push_back(seq.t.back() + 0.5);
    const Vector eps = gaussian(rng, o.latent_dim);
    out.push_back(check_latent_model(m, seq, times, eps, rng, o.h));
  }
  return out;
}

}  // namespace lode
