#include <gtest/gtest.h>

#include <cmath>

#include "fd_oracle.hpp"
#include "lode/cells.hpp"

namespace lode {
namespace {

TimedSequence random_sequence(Rng& rng, std::size_t n, std::size_t d) {
  TimedSequence seq;
  double t = rng.uniform(-1.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    seq.push_back(gaussian(rng, d), t);
    t += rng.uniform(0.05, 0.8);
  }
  return seq;
}

// --- independent oracles ----------------------------------------------------

double oracle_sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Vector oracle_rnn(const RnnCellParams& p, const Vector& h, const Vector& x) {
  Vector out(p.hidden_dim());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double z = p.b[i];
    for (std::size_t j = 0; j < h.size(); ++j) z += p.w_feedback(i, j) * h[j];
    for (std::size_t j = 0; j < x.size(); ++j) z += p.w_input(i, j) * x[j];
    out[i] = std::tanh(z);
  }
  return out;
}

CellState oracle_lstm(const LstmCellParams& p, const CellState& s, const Vector& x) {
  const std::size_t n = p.hidden_dim();
  CellState out{Vector(n), Vector(n)};
  for (std::size_t i = 0; i < n; ++i) {
    double zi = p.b_in[i], zf = p.b_f[i], zo = p.b_o[i], zc = p.b_c[i];
    for (std::size_t j = 0; j < x.size(); ++j) {
      zi += p.w_xin(i, j) * x[j];
      zf += p.w_xf(i, j) * x[j];
      zo += p.w_xo(i, j) * x[j];
      zc += p.w_xc(i, j) * x[j];
    }
    for (std::size_t j = 0; j < n; ++j) {
      zi += p.w_hin(i, j) * s.h[j];
      zf += p.w_hf(i, j) * s.h[j];
      zo += p.w_ho(i, j) * s.h[j];
      zc += p.w_hc(i, j) * s.h[j];
    }
    out.c[i] = oracle_sigmoid(zf) * s.c[i] + oracle_sigmoid(zi) * std::tanh(zc);
    out.h[i] = oracle_sigmoid(zo) * std::tanh(out.c[i]);
  }
  return out;
}

Vector oracle_field(const MlpParams& p, const Vector& h) {
  Vector out(p.output_dim());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = p.b2[i];
    for (std::size_t k = 0; k < p.hidden_dim(); ++k) {
      double z = p.b1[k];
      for (std::size_t j = 0; j < h.size(); ++j) z += p.w1(k, j) * h[j];
      s += p.w2(i, k) * std::tanh(z);
    }
    out[i] = s;
  }
  return out;
}

/// Hand-rolled 3/8-rule integration.
Vector oracle_solve(const MlpParams& f, Vector y, double t0, double t1, int steps) {
  if (t0 == t1) return y;
  const double h = (t1 - t0) / steps;
  for (int s = 0; s < steps; ++s) {
    auto lin = [&](std::initializer_list<std::pair<double, const Vector*>> terms) {
      Vector u = y;
      for (auto [c, k] : terms)
        for (std::size_t i = 0; i < u.size(); ++i) u[i] += h * c * (*k)[i];
      return u;
    };
    const Vector k1 = oracle_field(f, y);
    const Vector k2 = oracle_field(f, lin({{1.0 / 3, &k1}}));
    const Vector k3 = oracle_field(f, lin({{-1.0 / 3, &k1}, {1.0, &k2}}));
    const Vector k4 = oracle_field(f, lin({{1.0, &k1}, {-1.0, &k2}, {1.0, &k3}}));
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += h / 8 * (k1[i] + 3 * k2[i] + 3 * k3[i] + k4[i]);
  }
  return y;
}

void expect_close(const Vector& a, const Vector& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << i;
}

// --- single cells -----------------------------------------------------------

TEST(RnnCell, ZeroParamsGiveZero) {
  const auto p = make_rnn_cell(3, 4);
  EXPECT_EQ(rnn_cell(p, Vector{1, 2, 3, 4}, Vector{1, 1, 1}), Vector(4));
}

TEST(RnnCell, ZeroFeedbackDecouplesHistory) {
  Rng rng(1);
  auto p = make_rnn_cell(2, 3, rng);
  p.w_feedback = Matrix(3, 3);
  const Vector x{0.3, -0.2};
  EXPECT_EQ(rnn_cell(p, Vector{1, 2, 3}, x), rnn_cell(p, Vector{-5, 0, 9}, x));
}

TEST(RnnCell, MatchesDirectExpression) {
  Rng rng(2);
  const auto p = make_rnn_cell(3, 3, rng);
  const Vector h = gaussian(rng, 3), x = gaussian(rng, 3);
  expect_close(rnn_cell(p, h, x), oracle_rnn(p, h, x), 1e-12);
}

TEST(RnnCell, ShapeMismatch) {
  const auto p = make_rnn_cell(2, 3);
  EXPECT_THROW((void)rnn_cell(p, Vector(3), Vector(3)), ShapeError);
}

TEST(LstmCell, ZeroParamsAndState) {
  const auto p = make_lstm_cell(2, 3);
  LstmGates g;
  const CellState s = lstm_cell(p, CellState::zeros(3), Vector{0.7, -1.0}, &g);
  EXPECT_EQ(s.h, Vector(3));
  EXPECT_EQ(s.c, Vector(3));
  for (double v : g.in) EXPECT_EQ(v, 0.5);
  for (double v : g.forget) EXPECT_EQ(v, 0.5);
  for (double v : g.cand) EXPECT_EQ(v, 0.0);
}

TEST(LstmCell, SaturatedGatesFormConstantErrorCarousel) {
  Rng rng(3);
  auto p = make_lstm_cell(2, 4, rng);
  p.b_f = Vector(4, 30.0);
  p.b_in = Vector(4, -30.0);
  CellState s{gaussian(rng, 4), gaussian(rng, 4)};
  for (int i = 0; i < 10; ++i) {
    const CellState next = lstm_cell(p, s, gaussian(rng, 2));
    expect_close(next.c, s.c, 1e-12);
    s = next;
  }
}

TEST(LstmCell, MatchesDirectExpression) {
  Rng rng(4);
  const auto p = make_lstm_cell(2, 2, rng);
  const CellState s{gaussian(rng, 2), gaussian(rng, 2)};
  const Vector x = gaussian(rng, 2);
  const CellState got = lstm_cell(p, s, x), want = oracle_lstm(p, s, x);
  expect_close(got.h, want.h, 1e-12);
  expect_close(got.c, want.c, 1e-12);
}

TEST(LstmCell, GateRanges) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto p = make_lstm_cell(3, 5, rng);
    scale_params(p, 4.0);
    LstmGates g;
    (void)lstm_cell(p, CellState{gaussian(rng, 5), gaussian(rng, 5)}, gaussian(rng, 3), &g);
    for (std::size_t i = 0; i < 5; ++i) {
      for (double v : {g.in[i], g.forget[i], g.out[i]}) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
      }
      EXPECT_GT(g.cand[i], -1.0);
      EXPECT_LT(g.cand[i], 1.0);
    }
  }
}

// --- encoders ---------------------------------------------------------------

TEST(OdeRnnEncode, ZeroFieldReducesToRnn) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto p = make_rnn_cell(2, 4, rng);
    const MlpParams zero = make_mlp(4, 6, 4);
    const NeuralField f(zero);
    const auto seq = random_sequence(rng, 7, 2);
    for (bool reverse : {false, true}) {
      const auto ode = ode_rnn_encode(p, &f, seq, {reverse, 4});
      const auto plain = rnn_unroll(p, seq, reverse);
      for (std::size_t k = 0; k < seq.size(); ++k) expect_close(ode.outputs[k], plain.outputs[k], 1e-12);
    }
  }
}

TEST(OdeRnnEncode, SingleObservation) {
  Rng rng(6);
  const auto p = make_rnn_cell(2, 3, rng);
  const MlpParams fp = make_mlp(3, 4, 3, rng);
  const NeuralField f(fp);
  TimedSequence seq;
  seq.push_back(Vector{0.5, -0.5}, 2.0);
  const auto enc = ode_rnn_encode(p, &f, seq);
  ASSERT_EQ(enc.outputs.size(), 1u);
  EXPECT_TRUE(enc.tape.steps[0].solve.empty());
  expect_close(enc.h_final(), oracle_rnn(p, Vector(3), seq.x[0]), 1e-15);
}

TEST(OdeRnnEncode, MatchesCompositionOracle) {
  Rng rng(7);
  const auto p = make_rnn_cell(2, 3, rng);
  const MlpParams fp = make_mlp(3, 5, 3, rng);
  const NeuralField f(fp);
  const auto seq = random_sequence(rng, 5, 2);
  for (bool reverse : {false, true}) {
    const auto enc = ode_rnn_encode(p, &f, seq, {reverse, 4});
    Vector h(3);
    double t_prev = reverse ? seq.t.back() : seq.t.front();
    for (std::size_t k = 0; k < 5; ++k) {
      const std::size_t i = reverse ? 4 - k : k;
      h = oracle_rnn(p, oracle_solve(fp, h, t_prev, seq.t[i], 4), seq.x[i]);
      t_prev = seq.t[i];
    }
    expect_close(enc.h_final(), h, 1e-10);
  }
}

TEST(OdeRnnEncode, EmptySequenceRejected) {
  const auto p = make_rnn_cell(2, 3);
  EXPECT_THROW((void)rnn_unroll(p, TimedSequence{}), SpecError);
}

TEST(OdeLstmEncode, ZeroFieldReducesToLstm) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    const auto p = make_lstm_cell(3, 4, rng);
    const MlpParams zero = make_mlp(4, 5, 4);
    const NeuralField f(zero);
    const auto seq = random_sequence(rng, 6, 3);
    for (bool reverse : {false, true}) {
      const auto ode = ode_lstm_encode(p, &f, seq, {reverse, 3});
      const auto plain = lstm_unroll(p, seq, reverse);
      for (std::size_t k = 0; k < seq.size(); ++k) expect_close(ode.outputs[k], plain.outputs[k], 1e-12);
      expect_close(ode.final_state.c, plain.final_state.c, 1e-12);
    }
  }
}

TEST(OdeLstmEncode, CarouselKeepsCellStateAtZero) {
  Rng rng(8);
  auto p = make_lstm_cell(2, 3, rng);
  p.b_f = Vector(3, 30.0);
  p.b_in = Vector(3, -30.0);
  const MlpParams fp = make_mlp(3, 4, 3, rng);
  const NeuralField f(fp);
  const auto enc = ode_lstm_encode(p, &f, random_sequence(rng, 12, 2));
  for (double c : enc.final_state.c) EXPECT_NEAR(c, 0.0, 1e-11);
}

TEST(OdeLstmEncode, MatchesCompositionOracle) {
  Rng rng(9);
  const auto p = make_lstm_cell(2, 3, rng);
  const MlpParams fp = make_mlp(3, 5, 3, rng);
  const NeuralField f(fp);
  const auto seq = random_sequence(rng, 5, 2);
  for (bool reverse : {false, true}) {
    const auto enc = ode_lstm_encode(p, &f, seq, {reverse, 4});
    CellState s = CellState::zeros(3);
    double t_prev = reverse ? seq.t.back() : seq.t.front();
    for (std::size_t k = 0; k < 5; ++k) {
      const std::size_t i = reverse ? 4 - k : k;
      s = oracle_lstm(p, CellState{oracle_solve(fp, s.h, t_prev, seq.t[i], 4), s.c}, seq.x[i]);
      t_prev = seq.t[i];
    }
    expect_close(enc.final_state.h, s.h, 1e-10);
    expect_close(enc.final_state.c, s.c, 1e-10);
  }
}

// --- backward ---------------------------------------------------------------

template <class Cell>
struct EncoderParams {
  Cell cell;
  MlpParams field;

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    visit_nested("cell", self.cell, f);
    visit_nested("field", self.field, f);
  }
};

TEST(CellBackward, ZeroCotangentsGiveZeroGradients) {
  Rng rng(10);
  const auto p = make_lstm_cell(2, 3, rng);
  const MlpParams fp = make_mlp(3, 4, 3, rng);
  const NeuralField f(fp);
  const auto enc = ode_lstm_encode(p, &f, random_sequence(rng, 4, 2));
  const auto g = cell_backward(p, &f, enc.tape, EncoderCotangent{});
  EXPECT_EQ(global_norm(g.cell), 0.0);
  EXPECT_EQ(global_norm(g.field), 0.0);
}

TEST(CellBackward, TwoStepRnnMatchesHandExpansion) {
  Rng rng(11);
  const auto p = make_rnn_cell(2, 3, rng);
  TimedSequence seq;
  seq.push_back(gaussian(rng, 2), 0.0);
  seq.push_back(gaussian(rng, 2), 1.0);
  const CellState init{gaussian(rng, 3), Vector(3)};
  const auto enc = ode_rnn_encode<NeuralField>(p, nullptr, seq, {}, &init);
  const auto g = cell_backward<NeuralField>(p, nullptr, enc.tape, {{}, Vector(3, 1.0), {}});

  // L = sum(h2);  dL/dW_fb = sum_k (dL/dh2)(dh2/dh_k)(d+h_k/dW_fb), k in {1, 2}
  const Vector& h0 = init.h;
  const Vector h1 = oracle_rnn(p, h0, seq.x[0]);
  const Vector h2 = oracle_rnn(p, h1, seq.x[1]);
  Vector d2(3), d1(3);
  for (std::size_t i = 0; i < 3; ++i) {
    d2[i] = 1.0 - h2[i] * h2[i];
    d1[i] = 1.0 - h1[i] * h1[i];
  }
  Matrix want(3, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) want(i, j) += d2[i] * h1[j];  // k = 2
  Vector back(3);  // (dh2/dh1)^T 1 = W_fb^T D2 1
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t i = 0; i < 3; ++i) back[j] += p.w_feedback(i, j) * d2[i];
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) want(i, j) += back[i] * d1[i] * h0[j];  // k = 1
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(g.cell.w_feedback.values()[i], want.values()[i], 1e-10);
}

template <class Cell, class Encode>
void check_encoder_gradients(Cell cell, std::uint64_t seed, std::size_t length, bool reverse,
                             Encode encode, bool with_field) {
  Rng rng(seed);
  const std::size_t d = cell.input_dim(), n = cell.hidden_dim();
  EncoderParams<Cell> params{cell, make_mlp(n, 4, n, rng)};
  const auto seq = random_sequence(rng, length, d);
  std::vector<Vector> weights;
  for (std::size_t i = 0; i < length; ++i) weights.push_back(gaussian(rng, n));
  const Vector wc = gaussian(rng, n);
  const EncodeOptions opt{reverse, 3};

  auto objective = [&] {
    const NeuralField f(params.field);
    const auto enc = encode(params.cell, with_field ? &f : nullptr, seq, opt);
    double s = 0;
    for (std::size_t i = 0; i < length; ++i) s += dot(weights[i], enc.outputs[i]);
    if (!enc.final_state.c.empty()) s += dot(wc, enc.final_state.c);
    return s;
  };

  const NeuralField f(params.field);
  const auto enc = encode(params.cell, with_field ? &f : nullptr, seq, opt);
  const bool lstm = std::is_same_v<Cell, LstmCellParams>;
  const auto g = cell_backward(params.cell, with_field ? &f : nullptr, enc.tape,
                               EncoderCotangent{weights, {}, lstm ? wc : Vector{}});
  EncoderParams<Cell> analytic{g.cell, with_field ? g.field : zeros_like(params.field)};
  for (const auto& [name, err] : testing::fd_block_errors(params, analytic, objective)) {
    EXPECT_LT(err, 1e-5) << name << " len=" << length << " reverse=" << reverse;
  }
}

const auto rnn_encode = [](const RnnCellParams& p, const NeuralField* f, const TimedSequence& s,
                           const EncodeOptions& o) { return ode_rnn_encode(p, f, s, o); };
const auto lstm_encode = [](const LstmCellParams& p, const NeuralField* f, const TimedSequence& s,
                            const EncodeOptions& o) { return ode_lstm_encode(p, f, s, o); };

TEST(CellBackward, GradientsMatchFiniteDifferences) {
  for (std::size_t length : {1u, 3u, 8u}) {
    for (bool reverse : {false, true}) {
      for (bool with_field : {false, true}) {
        Rng rng(length * 10 + reverse);
        check_encoder_gradients(make_rnn_cell(2, 3, rng), 20 + length, length, reverse, rnn_encode,
                                with_field);
        check_encoder_gradients(make_lstm_cell(2, 3, rng), 30 + length, length, reverse,
                                lstm_encode, with_field);
      }
    }
  }
}

TEST(CellBackward, InitialStateCotangent) {
  Rng rng(12);
  const auto p = make_lstm_cell(2, 3, rng);
  const MlpParams fp = make_mlp(3, 4, 3, rng);
  const NeuralField f(fp);
  const auto seq = random_sequence(rng, 4, 2);
  const CellState init{gaussian(rng, 3), gaussian(rng, 3)};
  const Vector w = gaussian(rng, 3);
  const auto enc = ode_lstm_encode(p, &f, seq, {}, &init);
  const auto g = cell_backward(p, &f, enc.tape, {{}, w, {}});
  const double h = 1e-6;
  for (std::size_t i = 0; i < 3; ++i) {
    CellState a = init, b = init;
    a.c[i] += h;
    b.c[i] -= h;
    const double fd = (dot(w, ode_lstm_encode(p, &f, seq, {}, &a).final_state.h) -
                       dot(w, ode_lstm_encode(p, &f, seq, {}, &b).final_state.h)) /
                      (2 * h);
    EXPECT_NEAR(g.cot_c0[i], fd, 1e-8);
  }
}

TEST(CellBackward, JacobianChainFactorizes) {
  // prod_j dh_j/dh_{j-1} from per-step Jacobians equals the tape's dh_N/dh_0.
  Rng rng(13);
  const auto p = make_rnn_cell(2, 4, rng);
  const auto seq = random_sequence(rng, 6, 2);
  const CellState init{gaussian(rng, 4), Vector(4)};
  const auto enc = ode_rnn_encode<NeuralField>(p, nullptr, seq, {}, &init);

  Matrix product = Matrix::identity(4);
  Vector h = init.h;
  for (std::size_t k = 0; k < seq.size(); ++k) {
    const Vector next = rnn_cell(p, h, seq.x[k]);
    Matrix step(4, 4);  // diag(1 - h^2) W_fb
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) step(i, j) = (1 - next[i] * next[i]) * p.w_feedback(i, j);
    product = matmul(step, product);
    h = next;
  }
  for (std::size_t r = 0; r < 4; ++r) {
    Vector e(4);
    e[r] = 1.0;
    const auto g = cell_backward<NeuralField>(p, nullptr, enc.tape, {{}, e, {}});
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(g.cot_h0[c], product(r, c), 1e-8);
  }
}

TEST(CellBackward, CotangentShapeMismatch) {
  Rng rng(14);
  const auto p = make_rnn_cell(2, 3, rng);
  const auto enc = rnn_unroll(p, random_sequence(rng, 3, 2));
  EXPECT_THROW((void)cell_backward<NeuralField>(p, nullptr, enc.tape, {{Vector(3)}, {}, {}}),
               ShapeError);
  EXPECT_THROW((void)cell_backward<NeuralField>(p, nullptr, enc.tape, {{}, Vector(2), {}}),
               ShapeError);
}

}  // namespace
}  // namespace lode
