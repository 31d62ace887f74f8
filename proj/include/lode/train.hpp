#pragma once

// Loss, gradient clipping, Adam, and the training loop for latent ODE models.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "lode/errors.hpp"
#include "lode/latent.hpp"
#include "lode/numcore.hpp"
#include "lode/params.hpp"

namespace lode {

// ---------------------------------------------------------------------------
// Loss

struct LossSpec {
  /// Weight of KL(N(mu, sigma^2) || N(0, I)); 0 trains on reconstruction alone.
  double kl_weight = 0.0;
};

struct LossValue {
  double total = 0.0;
  double mse = 0.0;
  double kl = 0.0;
  LossCotangent cot;
};

/// KL(N(mu, sigma^2) || N(0, I)) = 1/2 sum(sigma^2 + mu^2 - 1 - log sigma^2).
inline double kl_divergence(const Vector& mu, const Vector& log_sigma) {
  if (mu.size() != log_sigma.size()) throw ShapeError("kl_divergence: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    s += std::exp(2.0 * log_sigma[i]) + mu[i] * mu[i] - 1.0 - 2.0 * log_sigma[i];
  }
  return 0.5 * s;
}

/// Mean squared error over all steps and dimensions plus beta * KL.
inline LossValue compute_loss(const std::vector<Vector>& pred, const std::vector<Vector>& target,
                              const LatentPath& path, const LossSpec& spec = {}) {
  if (pred.size() != target.size()) {
    throw ShapeError("loss: " + std::to_string(pred.size()) + " predictions vs " +
                     std::to_string(target.size()) + " targets");
  }
  if (pred.empty()) throw SpecError("loss: no predictions");
  LossValue out;
  const std::size_t p = pred.front().size();
  const double count = static_cast<double>(pred.size() * p);
  out.cot.predictions.reserve(pred.size());
  double sq = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].size() != p || target[i].size() != p) {
      throw ShapeError("loss: dimension mismatch at step " + std::to_string(i));
    }
    Vector c(p);
    for (std::size_t j = 0; j < p; ++j) {
      const double r = pred[i][j] - target[i][j];
      sq += r * r;
      c[j] = 2.0 * r / count;
    }
    out.cot.predictions.push_back(std::move(c));
  }
  out.mse = sq / count;
  out.total = out.mse;
  if (spec.kl_weight != 0.0) {
    out.kl = kl_divergence(path.mu, path.log_sigma);
    out.total += spec.kl_weight * out.kl;
    const std::size_t l = path.mu.size();
    out.cot.mu = Vector(l);
    out.cot.log_sigma = Vector(l);
    for (std::size_t i = 0; i < l; ++i) {
      out.cot.mu[i] = spec.kl_weight * path.mu[i];
      out.cot.log_sigma[i] = spec.kl_weight * (std::exp(2.0 * path.log_sigma[i]) - 1.0);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Clipping

/// A gradient entry is NaN or infinite.
class NonFiniteGradientError : public std::runtime_error {
 public:
  explicit NonFiniteGradientError(const std::string& block)
      : std::runtime_error("non-finite gradient in parameter '" + block + "'"), block_(block) {}
  const std::string& block() const noexcept { return block_; }

 private:
  std::string block_;
};

template <class P>
void check_finite_gradients(const P& grads) {
  for (const auto& b : param_blocks(grads)) {
    if (!all_finite(b.values)) throw NonFiniteGradientError(b.name);
  }
}

struct ClipResult {
  double pre_norm = 0.0;
  double post_norm = 0.0;
  bool clipped = false;
};

/// Rescales all gradients jointly by threshold / ||g|| when ||g|| >= threshold.
template <class P>
ClipResult clip_gradients(P& grads, double threshold) {
  if (!(threshold > 0.0)) throw SpecError("clip_gradients: threshold must be > 0");
  check_finite_gradients(grads);
  ClipResult r;
  r.pre_norm = global_norm(grads);
  r.post_norm = r.pre_norm;
  if (r.pre_norm >= threshold) {
    r.clipped = true;
    // A gradient already at the threshold up to rounding is left alone, which
    // makes clipping idempotent.
    const double factor = threshold / r.pre_norm;
    if (factor < 1.0 - 8.0 * std::numeric_limits<double>::epsilon()) {
      scale_params(grads, factor);
      r.post_norm = global_norm(grads);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class P>
struct AdamState {
  AdamConfig config;
  P m;
  P v;
  std::size_t step = 0;
};

template <class P>
AdamState<P> make_adam(const P& params, AdamConfig config = {}) {
  return AdamState<P>{config, zeros_like(params), zeros_like(params), 0};
}

template <class P>
void adam_step(AdamState<P>& s, P& params, const P& grads) {
  auto pb = param_blocks(params);
  const auto gb = param_blocks(grads);
  auto mb = param_blocks(s.m);
  auto vb = param_blocks(s.v);
  if (pb.size() != gb.size() || pb.size() != mb.size()) {
    throw ShapeError("adam_step: parameter block count mismatch");
  }
  ++s.step;
  const AdamConfig& c = s.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.step));
  for (std::size_t b = 0; b < pb.size(); ++b) {
    if (pb[b].values.size() != gb[b].values.size() || pb[b].values.size() != mb[b].values.size()) {
      throw ShapeError("adam_step: block '" + pb[b].name + "' size mismatch");
    }
    for (std::size_t j = 0; j < pb[b].values.size(); ++j) {
      const double g = gb[b].values[j];
      double& m = mb[b].values[j];
      double& v = vb[b].values[j];
      m = c.beta1 * m + (1.0 - c.beta1) * g;
      v = c.beta2 * v + (1.0 - c.beta2) * g * g;
      pb[b].values[j] -= c.lr * (m / bc1) / (std::sqrt(v / bc2) + c.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop

/// One training pair: encode `input`, predict at `times`, compare with `targets`.
struct Example {
  TimedSequence input;
  std::vector<double> times;
  std::vector<Vector> targets;
};

/// Reconstruction example: predict the observations themselves.
inline Example reconstruction_example(const TimedSequence& seq) { return {seq, seq.t, seq.x}; }

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 20;
  AdamConfig adam;
  LossSpec loss;
  std::optional<double> clip;
  std::uint64_t seed = 0;
  /// Worker threads for per-example passes. Results do not depend on it.
  std::size_t threads = 1;
};

struct EpochRecord {
  std::size_t epoch = 0;
  /// Mean example loss over the epoch, measured before each batch update.
  double loss = 0.0;
  /// Mean over batches of the global gradient norm before clipping.
  double pre_clip_norm = 0.0;
  /// Largest global gradient norm applied in the epoch.
  double post_clip_norm = 0.0;
  std::vector<double> batch_norms;
  double wall_ms = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  bool empty() const { return epochs.empty(); }
  double initial_loss() const { return epochs.front().loss; }
  double final_loss() const { return epochs.back().loss; }

  /// epoch,loss,pre_clip_norm,post_clip_norm. Timing lives in timing_csv so
  /// that this text is reproducible bit for bit.
  std::string csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "epoch,loss,pre_clip_norm,post_clip_norm\n";
    for (const auto& e : epochs) {
      os << e.epoch << ',' << e.loss << ',' << e.pre_clip_norm << ',' << e.post_clip_norm << '\n';
    }
    return os.str();
  }

  std::string timing_csv() const {
    std::ostringstream os;
    os << "epoch,wall_ms\n";
    for (const auto& e : epochs) os << e.epoch << ',' << e.wall_ms << '\n';
    return os.str();
  }
};

/// Training stopped on a non-finite loss, state, or gradient.
class TrainingDiverged : public DivergenceError {
 public:
  TrainingDiverged(const std::string& why, std::size_t epoch, TrainLog log)
      : DivergenceError("training diverged in epoch " + std::to_string(epoch) + ": " + why, epoch),
        epoch_(epoch),
        log_(std::move(log)) {}
  std::size_t epoch() const noexcept { return epoch_; }
  /// Completed epochs plus the partial record of the failing one.
  const TrainLog& log() const noexcept { return log_; }

 private:
  std::size_t epoch_;
  TrainLog log_;
};

struct ExampleResult {
  double loss = 0.0;
  ModelParams grad;
};

/// Loss and gradient for one example with the given noise.
inline ExampleResult example_gradient(const LatentModel& m, const Example& ex, const Vector& eps,
                                      const LossSpec& spec) {
  const ForwardTape tape = forward(m, ex.input, ex.times, eps);
  const LossValue lv = compute_loss(tape.predictions, ex.targets, tape.path(), spec);
  return {lv.total, model_backward(m, tape, lv.cot)};
}

namespace detail {

template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch Adam over `data`. The batch gradient is the mean of
/// per-example gradients, summed in example order.
inline TrainLog train_epochs(LatentModel& model, const std::vector<Example>& data,
                             const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  if (data.empty()) throw SpecError("train_epochs: dataset is empty");
  if (cfg.batch_size == 0) throw SpecError("train_epochs: batch_size must be >= 1");
  if (cfg.clip && !(*cfg.clip > 0.0)) throw SpecError("train_epochs: clip threshold must be > 0");
  TrainLog log;
  auto adam = make_adam(model.params, cfg.adam);
  const Rng root(cfg.seed);
  const std::size_t l = model.params.latent_dim();
  std::vector<std::size_t> order(data.size());

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = root.derive(2 * epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.index(i)]);
    Rng noise = root.derive(2 * epoch + 1);
    std::vector<Vector> eps(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) eps[i] = gaussian(noise, l);

    double loss_sum = 0.0;
    auto fail = [&](const std::string& why) {
      rec.loss = loss_sum / static_cast<double>(data.size());
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      log.epochs.push_back(rec);
      throw TrainingDiverged(why, epoch, log);
    };

    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - first);
      std::vector<ExampleResult> results(count);
      try {
        detail::parallel_for(count, cfg.threads, [&](std::size_t j) {
          const std::size_t i = order[first + j];
          results[j] = example_gradient(model, data[i], eps[i], cfg.loss);
        });
      } catch (const DivergenceError& e) {
        fail(e.what());
      }
      ModelParams grad = zeros_like(model.params);
      for (const auto& r : results) {
        if (!std::isfinite(r.loss)) fail("non-finite loss");
        loss_sum += r.loss;
        add_scaled(grad, r.grad, 1.0 / static_cast<double>(count));
      }
      double pre = 0.0, post = 0.0;
      try {
        if (cfg.clip) {
          const ClipResult c = clip_gradients(grad, *cfg.clip);
          pre = c.pre_norm;
          post = c.post_norm;
        } else {
          check_finite_gradients(grad);
          pre = post = global_norm(grad);
        }
      } catch (const NonFiniteGradientError& e) {
        fail(e.what());
      }
      rec.batch_norms.push_back(pre);
      rec.pre_clip_norm += pre;
      rec.post_clip_norm = std::max(rec.post_clip_norm, post);
      adam_step(adam, model.params, grad);
    }
    rec.loss = loss_sum / static_cast<double>(data.size());
    rec.pre_clip_norm /= static_cast<double>(rec.batch_norms.size());
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return log;
}

/// Mean squared error of predictions against targets, no gradient.
inline double mse(const std::vector<Vector>& pred, const std::vector<Vector>& target) {
  return compute_loss(pred, target, LatentPath{}).mse;
}

}  // namespace lode
