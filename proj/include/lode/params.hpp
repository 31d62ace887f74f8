#pragma once

// Parameter containers. Every parameter struct exposes a static
// `visit(self, f)` that calls `f(name, tensor)` for each weight in declared
// order; the generic helpers below (zeroing, axpy, norms, block listing) are
// built on that single hook so gradients can reuse the parameter types.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "lode/numcore.hpp"

namespace lode {

template <class P, class F>
void visit_params(P& p, F&& f) {
  std::remove_const_t<P>::visit(p, f);
}

/// Visits a nested parameter struct with a dotted name prefix.
template <class P, class F>
void visit_nested(const std::string& prefix, P& p, F& f) {
  visit_params(p, [&](const std::string& name, auto& tensor) { f(prefix + "." + name, tensor); });
}

template <class Span>
struct BasicBlock {
  std::string name;
  Span values;
};
using ParamBlock = BasicBlock<std::span<double>>;
using ConstParamBlock = BasicBlock<std::span<const double>>;

template <class P>
std::vector<ParamBlock> param_blocks(P& p) {
  std::vector<ParamBlock> out;
  visit_params(p, [&](const std::string& name, auto& t) { out.push_back({name, t.values()}); });
  return out;
}

template <class P>
std::vector<ConstParamBlock> param_blocks(const P& p) {
  std::vector<ConstParamBlock> out;
  visit_params(p, [&](const std::string& name, const auto& t) {
    out.push_back({name, t.values()});
  });
  return out;
}

template <class P>
std::size_t param_count(const P& p) {
  std::size_t n = 0;
  for (const auto& b : param_blocks(p)) n += b.values.size();
  return n;
}

template <class P>
void scale_params(P& p, double s) {
  for (auto& b : param_blocks(p))
    for (double& x : b.values) x *= s;
}

template <class P>
P zeros_like(const P& p) {
  P z = p;
  for (auto& b : param_blocks(z))
    for (double& x : b.values) x = 0.0;
  return z;
}

/// a += s * b
template <class P>
void add_scaled(P& a, const P& b, double s) {
  auto ab = param_blocks(a);
  const auto bb = param_blocks(b);
  if (ab.size() != bb.size()) throw ShapeError("add_scaled: parameter block count mismatch");
  for (std::size_t i = 0; i < ab.size(); ++i) {
    if (ab[i].values.size() != bb[i].values.size()) {
      throw ShapeError("add_scaled: block '" + ab[i].name + "' size mismatch");
    }
    for (std::size_t j = 0; j < ab[i].values.size(); ++j) ab[i].values[j] += s * bb[i].values[j];
  }
}

template <class P>
double params_dot(const P& a, const P& b) {
  const auto ab = param_blocks(a);
  const auto bb = param_blocks(b);
  if (ab.size() != bb.size()) throw ShapeError("params_dot: parameter block count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < ab.size(); ++i) {
    if (ab[i].values.size() != bb[i].values.size()) {
      throw ShapeError("params_dot: block '" + ab[i].name + "' size mismatch");
    }
    for (std::size_t j = 0; j < ab[i].values.size(); ++j) s += ab[i].values[j] * bb[i].values[j];
  }
  return s;
}

template <class P>
double global_norm(const P& p) {
  return std::sqrt(params_dot(p, p));
}

/// Flattened copy of every parameter in declared order.
template <class P>
std::vector<double> flatten(const P& p) {
  std::vector<double> out;
  for (const auto& b : param_blocks(p)) out.insert(out.end(), b.values.begin(), b.values.end());
  return out;
}

// ---------------------------------------------------------------------------
// One-hidden-layer feed-forward network: y = w2 tanh(w1 x + b1) + b2.
// Used for vector fields, the translator g, and the output network.

struct MlpParams {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;

  std::size_t input_dim() const { return w1.cols(); }
  std::size_t hidden_dim() const { return w1.rows(); }
  std::size_t output_dim() const { return w2.rows(); }

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f(std::string("w1"), self.w1);
    f(std::string("b1"), self.b1);
    f(std::string("w2"), self.w2);
    f(std::string("b2"), self.b2);
  }
};

inline MlpParams make_mlp(std::size_t in, std::size_t hidden, std::size_t out) {
  return MlpParams{Matrix(hidden, in), Vector(hidden), Matrix(out, hidden), Vector(out)};
}

inline MlpParams make_mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
  MlpParams p = make_mlp(in, hidden, out);
  init_uniform(p.w1.values(), rng, in);
  init_uniform(p.b1.values(), rng, in);
  init_uniform(p.w2.values(), rng, hidden);
  init_uniform(p.b2.values(), rng, hidden);
  return p;
}

inline Vector mlp_hidden(const MlpParams& p, const Vector& x) {
  Vector a = p.b1;
  matvec_acc(a, p.w1, x);
  for (double& v : a) v = std::tanh(v);
  return a;
}

inline Vector mlp_forward(const MlpParams& p, const Vector& x) {
  const Vector a = mlp_hidden(p, x);
  Vector y = p.b2;
  matvec_acc(y, p.w2, a);
  return y;
}

/// Accumulates parameter gradients into `grad` and returns the input cotangent.
/// The hidden activation is recomputed from `x`.
inline Vector mlp_backward(const MlpParams& p, const Vector& x, const Vector& cot_y,
                           MlpParams& grad) {
  if (cot_y.size() != p.output_dim()) {
    throw ShapeError("mlp_backward: cotangent length " + std::to_string(cot_y.size()) +
                     " vs output " + std::to_string(p.output_dim()));
  }
  const Vector a = mlp_hidden(p, x);
  outer_acc(grad.w2, cot_y, a);
  grad.b2 += cot_y;
  Vector dpre = matvec_t(p.w2, cot_y);
  for (std::size_t i = 0; i < dpre.size(); ++i) dpre[i] *= 1.0 - a[i] * a[i];
  outer_acc(grad.w1, dpre, x);
  grad.b1 += dpre;
  return matvec_t(p.w1, dpre);
}

}  // namespace lode
