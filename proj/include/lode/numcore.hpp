#pragma once

// Dense double-precision vectors and matrices, activations, and the seeded
// random source shared by every other module.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lode/errors.hpp"

namespace lode {

class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t len, double fill = 0.0) : data_(len, fill) {}
  Vector(std::initializer_list<double> init) : data_(init) {}
  explicit Vector(std::vector<double> data) : data_(std::move(data)) {}

  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Vector& operator+=(const Vector& o) {
    check_same(o, "+=");
    for (std::size_t i = 0; i < size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Vector& operator-=(const Vector& o) {
    check_same(o, "-=");
    for (std::size_t i = 0; i < size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Vector& operator*=(double s) {
    for (double& x : data_) x *= s;
    return *this;
  }

  bool operator==(const Vector&) const = default;

 private:
  void check_same(const Vector& o, const char* op) const {
    if (o.size() != size()) {
      throw ShapeError(std::string("vector ") + op + ": length " + std::to_string(size()) +
                       " vs " + std::to_string(o.size()));
    }
  }

  std::vector<double> data_;
};

inline Vector operator+(Vector a, const Vector& b) { return a += b; }
inline Vector operator-(Vector a, const Vector& b) { return a -= b; }
inline Vector operator*(double s, Vector v) { return v *= s; }

inline double dot(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: length " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const Vector& v) { return std::sqrt(dot(v, v)); }

/// y += a * x
inline void axpy(Vector& y, double a, const Vector& x) {
  if (x.size() != y.size()) {
    throw ShapeError("axpy: length " + std::to_string(y.size()) + " vs " + std::to_string(x.size()));
  }
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

inline Vector hadamard(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) {
    throw ShapeError("hadamard: length " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      if (row.size() != cols_) throw ShapeError("Matrix: ragged initializer");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  static Matrix diagonal(std::initializer_list<double> diag) {
    Matrix m(diag.size(), diag.size());
    std::size_t i = 0;
    for (double d : diag) {
      m(i, i) = d;
      ++i;
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool square() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  Matrix& operator*=(double s) {
    for (double& x : data_) x *= s;
    return *this;
  }

  std::string shape_str() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix operator*(double s, Matrix m) { return m *= s; }

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + a.shape_str() + " times " + b.shape_str());
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

/// out += m * v
inline void matvec_acc(Vector& out, const Matrix& m, const Vector& v) {
  if (m.cols() != v.size() || m.rows() != out.size()) {
    throw ShapeError("matvec: matrix " + m.shape_str() + " with vector of length " +
                     std::to_string(v.size()));
  }
  const double* row = m.data();
  for (std::size_t r = 0; r < m.rows(); ++r, row += m.cols()) {
    double s = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) s += row[c] * v[c];
    out[r] += s;
  }
}

/// out += m^T * v
inline void matvec_t_acc(Vector& out, const Matrix& m, const Vector& v) {
  if (m.rows() != v.size() || m.cols() != out.size()) {
    throw ShapeError("matvec_t: matrix " + m.shape_str() + " with vector of length " +
                     std::to_string(v.size()));
  }
  const double* row = m.data();
  for (std::size_t r = 0; r < m.rows(); ++r, row += m.cols()) {
    const double vr = v[r];
    if (vr == 0.0) continue;
    for (std::size_t c = 0; c < m.cols(); ++c) out[c] += row[c] * vr;
  }
}

/// m += a ⊗ b (outer product accumulation, used for weight gradients).
inline void outer_acc(Matrix& m, const Vector& a, const Vector& b) {
  if (m.rows() != a.size() || m.cols() != b.size()) {
    throw ShapeError("outer: matrix " + m.shape_str() + " with vectors of length " +
                     std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  double* row = m.data();
  for (std::size_t r = 0; r < m.rows(); ++r, row += m.cols()) {
    const double ar = a[r];
    if (ar == 0.0) continue;
    for (std::size_t c = 0; c < m.cols(); ++c) row[c] += ar * b[c];
  }
}

inline Vector matvec(const Matrix& m, const Vector& v) {
  Vector out(m.rows());
  matvec_acc(out, m, v);
  return out;
}

inline Vector matvec_t(const Matrix& m, const Vector& v) {
  Vector out(m.cols());
  matvec_t_acc(out, m, v);
  return out;
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { Tanh, Sigmoid, Identity };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Identity: return "identity";
  }
  return "?";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "identity") return Activation::Identity;
  throw SpecError("unknown activation '" + std::string(s) + "'");
}

inline double sigmoid(double x) {
  // Split on sign so exp never overflows.
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::Tanh: return std::tanh(x);
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::Identity: return x;
  }
  return x;
}

/// Derivative expressed through the activation's output y = a(x).
inline double activate_deriv_from_output(Activation a, double y) {
  switch (a) {
    case Activation::Tanh: return 1.0 - y * y;
    case Activation::Sigmoid: return y * (1.0 - y);
    case Activation::Identity: return 1.0;
  }
  return 1.0;
}

inline Vector apply(Activation a, Vector v) {
  for (double& x : v) x = activate(a, x);
  return v;
}

inline Vector sigmoid(const Vector& v) { return apply(Activation::Sigmoid, v); }

inline Vector sigmoid_deriv(const Vector& v) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double s = sigmoid(v[i]);
    out[i] = s * (1.0 - s);
  }
  return out;
}

inline Vector tanh_act(const Vector& v) { return apply(Activation::Tanh, v); }

inline Vector tanh_deriv(const Vector& v) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double t = std::tanh(v[i]);
    out[i] = 1.0 - t * t;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Random numbers

/// SplitMix64 finalizer; mixes a seed and a stream id into an independent seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Seeded generator. Normals use Box-Muller on top of mt19937_64 so draws are
/// identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [0, n).
  std::size_t index(std::size_t n) {
    // Rejection sampling keeps the draw unbiased and platform-independent.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % n);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  /// Independent generator for a numbered sub-stream.
  Rng derive(std::uint64_t stream) const { return Rng(mix_seed(seed_, stream)); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// `len` independent standard-normal draws.
inline Vector gaussian(Rng& rng, std::size_t len) {
  if (len == 0) throw SpecError("gaussian: requested length must be positive");
  Vector v(len);
  for (double& x : v) x = rng.normal();
  return v;
}

inline Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (double& x : m.values()) x = rng.normal();
  return m;
}

/// Uniform in [-s, s] with s = 1/sqrt(fan_in).
inline void init_uniform(std::span<double> values, Rng& rng, std::size_t fan_in) {
  const double s = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (double& x : values) x = rng.uniform(-s, s);
}

// ---------------------------------------------------------------------------
// Spectral estimates

/// Power-iteration estimate of the dominant eigenvalue magnitude.
///
/// The last iterate spans a two-dimensional Krylov space with its image; the
/// Ritz values of that space resolve complex-conjugate dominant pairs, where
/// plain power iteration oscillates instead of converging.
inline double spectral_radius_est(const Matrix& m, std::size_t iters = 200) {
  if (!m.square()) throw ShapeError("spectral_radius_est: non-square matrix " + m.shape_str());
  if (iters == 0) throw SpecError("spectral_radius_est: iters must be >= 1");
  const std::size_t n = m.rows();
  if (n == 0) return 0.0;
  if (n == 1) return std::abs(m(0, 0));

  Vector v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.1 * static_cast<double>(i % 7);
  v *= 1.0 / norm2(v);
  for (std::size_t k = 0; k < iters; ++k) {
    Vector w = matvec(m, v);
    const double nw = norm2(w);
    if (nw == 0.0) return 0.0;
    v = (1.0 / nw) * std::move(w);
  }

  const Vector v1 = matvec(m, v);
  const Vector v2 = matvec(m, v1);
  // Least squares for v2 ≈ -c1 v1 - c0 v: the dominant pair's characteristic polynomial.
  const double g00 = dot(v, v), g01 = dot(v, v1), g11 = dot(v1, v1);
  const double r0 = -dot(v, v2), r1 = -dot(v1, v2);
  const double det = g00 * g11 - g01 * g01;
  if (det <= 1e-14 * g00 * g11) {
    return g11 > 0.0 ? std::abs(g01 / g00) : 0.0;
  }
  const double c0 = (r0 * g11 - r1 * g01) / det;
  const double c1 = (g00 * r1 - g01 * r0) / det;
  const double disc = c1 * c1 - 4.0 * c0;
  if (disc >= 0.0) {
    const double sq = std::sqrt(disc);
    return std::max(std::abs((-c1 + sq) / 2.0), std::abs((-c1 - sq) / 2.0));
  }
  return std::sqrt(c0);
}

/// Operator 2-norm estimate: square root of the dominant eigenvalue of m^T m.
inline double operator_norm_est(const Matrix& m, std::size_t iters = 200) {
  if (m.rows() == 0 || m.cols() == 0) return 0.0;
  Vector v(m.cols(), 1.0);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += 0.1 * static_cast<double>(i % 5);
  v *= 1.0 / norm2(v);
  double sigma = 0.0;
  for (std::size_t k = 0; k < iters; ++k) {
    Vector w = matvec_t(m, matvec(m, v));
    const double nw = norm2(w);
    if (nw == 0.0) return 0.0;
    sigma = std::sqrt(nw);
    v = (1.0 / nw) * std::move(w);
  }
  return sigma;
}

}  // namespace lode
