#pragma once

// The four CLI commands, callable in-process. Each writes into a run
// directory and returns a process exit code.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "lode/checkpoint.hpp"
#include "lode/cli/config.hpp"
#include "lode/cli/svg.hpp"
#include "lode/data.hpp"
#include "lode/gradcheck.hpp"
#include "lode/gradflow.hpp"
#include "lode/latent.hpp"
#include "lode/train.hpp"

namespace lode::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kExitOk = 0,
  /// A gradient check exceeded its tolerance.
  kExitCheckFailed = 1,
  kExitUsage = 2,
  kExitDiverged = 3,
  kExitRuntime = 4,
};

struct RunContext {
  Config config = Config::defaults();
  fs::path run_dir;
  std::ostream* out = &std::cout;
  std::ostream* err = &std::cerr;
};

/// `explicit_dir` if given, otherwise <LODE_OUT_DIR or ./runs>/<command>.
inline fs::path resolve_run_dir(const std::string& explicit_dir, const std::string& command) {
  if (!explicit_dir.empty()) return explicit_dir;
  const char* root = std::getenv("LODE_OUT_DIR");
  return fs::path(root && *root ? root : "runs") / command;
}

/// Writes through a temporary file and a rename so readers never see a partial file.
inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    f << text;
    if (!f) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

inline void write_bytes(const fs::path& path, const std::vector<char>& bytes) {
  write_text(path, std::string(bytes.begin(), bytes.end()));
}

inline std::string fmt_g(double v, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

/// Writes config.cfg and seed.txt.
inline void record_run(const RunContext& ctx) {
  fs::create_directories(ctx.run_dir);
  write_text(ctx.run_dir / "config.cfg", ctx.config.dump());
  write_text(ctx.run_dir / "seed.txt", std::to_string(ctx.config.get_int("seed")) + "\n");
}

// ---------------------------------------------------------------------------
// Model and training setup

inline ModelDims model_dims(const Config& c, std::size_t features) {
  ModelDims d{features,
              c.get_size("hidden"),
              c.get_size("enc_field_hidden"),
              c.get_size("g_hidden"),
              c.get_size("latent_dim"),
              c.get_size("dec_field_hidden"),
              c.get_size("out_hidden"),
              features};
  d.validate();
  return d;
}

inline ModelOptions model_options(const Config& c) {
  return ModelOptions{c.get_size("encoder_steps"), c.get_size("decoder_steps")};
}

inline std::vector<Variant> config_variants(const Config& c) {
  std::vector<Variant> out;
  for (const auto& s : c.get_texts("variants")) {
    if (s == "all") return {std::begin(kAllVariants), std::end(kAllVariants)};
    out.push_back(parse_variant(s));
  }
  if (out.empty()) throw SpecError("no variants selected");
  return out;
}

inline TrainConfig train_config(const Config& c, Variant v, std::uint64_t seed) {
  TrainConfig t;
  t.epochs = c.get_size("epochs");
  t.batch_size = c.get_size("batch_size");
  t.adam.lr = c.get_real("lr");
  t.loss.kl_weight = c.get_real("kl_weight");
  if (uses_clipping(v)) t.clip = c.get_real("clip");
  t.seed = seed;
  t.threads = std::max<std::size_t>(1, c.get_size("threads"));
  return t;
}

inline LatentModel init_model(const Config& c, Variant v, std::size_t features, std::uint64_t seed) {
  Rng rng(seed);
  LatentModel m = make_model(encoder_kind(v), model_dims(c, features), rng, model_options(c));
  const std::size_t l = m.params.latent_dim();
  for (std::size_t i = 0; i < l; ++i) m.params.g.b2[l + i] = c.get_real("init_log_sigma");
  return m;
}

struct TrainedModel {
  LatentModel model;
  TrainLog log;
  std::size_t aborts = 0;
  std::uint64_t seed = 0;
};

/// Trains one variant. A divergence is retried with a fresh seed up to
/// `retries` times; the last TrainingDiverged propagates.
inline TrainedModel train_variant(const Config& c, Variant v, const std::vector<Example>& data,
                                  std::uint64_t seed, std::ostream& log) {
  const std::size_t retries = c.get_size("retries");
  const std::size_t features = data.front().input.dim();
  for (std::size_t attempt = 0;; ++attempt) {
    const std::uint64_t s = attempt == 0 ? seed : mix_seed(seed, attempt);
    LatentModel m = init_model(c, v, features, s);
    try {
      TrainLog tl = train_epochs(m, data, train_config(c, v, s));
      return {std::move(m), std::move(tl), attempt, s};
    } catch (const TrainingDiverged& e) {
      log << to_string(v) << ": " << e.what() << '\n';
      if (attempt >= retries) throw;
      log << to_string(v) << ": retrying with a new seed\n";
    }
  }
}

/// Mean prediction (eps = 0) at `times`, with the decoder solver from the config.
inline std::vector<Vector> predict(const Config& c, const LatentModel& m, const TimedSequence& seq,
                                   const std::vector<double>& times) {
  const Vector z0 = encode(m, seq, Vector(m.params.latent_dim())).path.z0;
  const std::string solver = c.get_text("eval_solver");
  if (solver == "dopri5") {
    return decode_adaptive(m, z0, seq.t.front(), times, c.get_real("eval_rtol"), c.get_real("eval_atol"));
  }
  if (solver != "rk4") throw SpecError("eval_solver must be rk4 or dopri5, got '" + solver + "'");
  return decode(m, z0, seq.t.front(), times);
}

inline double positive_real(const Config& c, const std::string& key) {
  const double v = c.get_real(key);
  if (!(v > 0.0)) throw SpecError("config key '" + key + "' must be > 0");
  return v;
}

inline TimedSequence scale_times(TimedSequence s, double time_scale) {
  for (double& t : s.t) t /= time_scale;
  return s;
}

// ---------------------------------------------------------------------------
// spiral

namespace detail {

inline std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = n == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

inline double sq_error(const Vector& a, const Vector& b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return s;
}

struct SpiralEval {
  double recon = 0.0;
  double backward = 0.0;
  double forward = 0.0;
};

}  // namespace detail

inline SpiralData spiral_data_from(const Config& c) {
  SpiralSpec spec;
  spec.n_per_direction = c.get_size("n_per_direction");
  spec.n_obs = c.get_size("n_obs");
  spec.dense_length = c.get_size("dense_length");
  spec.noise_std = c.get_real("noise_std");
  spec.a = c.get_real("spiral_a");
  spec.b = c.get_real("spiral_b");
  spec.seed = static_cast<std::uint64_t>(c.get_int("seed"));
  return gen_spirals(spec);
}

inline int cmd_spiral(const RunContext& ctx) {
  const Config& c = ctx.config;
  std::ostream& out = *ctx.out;
  const std::uint64_t seed = static_cast<std::uint64_t>(c.get_int("seed"));
  const double time_scale = positive_real(c, "time_scale");
  const auto variants = config_variants(c);
  const SpiralData data = spiral_data_from(c);
  const SpiralSpec& spec = data.spec;
  record_run(ctx);
  if (c.get_bool("snapshot")) write_bytes(ctx.run_dir / "data.snap", serialize_snapshot(spiral_snapshot(data)));

  NormStats stats{Vector{0.0, 0.0}, Vector{1.0, 1.0}, {}};
  if (c.get_bool("normalize")) {
    std::vector<Vector> rows;
    for (const auto& s : data.train) rows.insert(rows.end(), s.x.begin(), s.x.end());
    stats = compute_stats(rows);
  }
  auto to_model = [&](const TimedSequence& s) { return scale_times(normalize(s, stats), time_scale); };
  std::vector<Example> examples;
  for (const auto& s : data.train) examples.push_back(reconstruction_example(to_model(s)));

  // Extrapolation grids on both sides of the training interval.
  const double margin = c.get_real("extrapolate_fraction") * spec.t_max;
  const std::size_t k_ext = margin > 0.0 ? 50 : 0;
  std::vector<double> back_t, fwd_t;
  if (k_ext) {
    back_t = detail::linspace(-margin, 0.0, k_ext + 1);
    back_t.pop_back();
    fwd_t = detail::linspace(spec.t_max, spec.t_max + margin, k_ext + 1);
    fwd_t.erase(fwd_t.begin());
  }
  std::vector<double> grid = back_t;
  grid.insert(grid.end(), data.test.front().t.begin(), data.test.front().t.end());
  grid.insert(grid.end(), fwd_t.begin(), fwd_t.end());
  std::vector<double> model_grid = grid;
  for (double& t : model_grid) t /= time_scale;

  std::ostringstream summary;
  summary << "variant,initial_loss,final_loss,loss_ratio,divergence_aborts,recon_mse,extrap_backward_mse,"
             "extrap_forward_mse\n";
  summary.precision(10);
  int code = kExitOk;
  for (const Variant v : variants) {
    const fs::path vdir = ctx.run_dir / to_string(v);
    out << display_name(v) << ": training " << examples.size() << " sequences for " << c.get_int("epochs")
        << " epochs\n";
    TrainedModel tm;
    try {
      tm = train_variant(c, v, examples, seed, *ctx.err);
    } catch (const TrainingDiverged& e) {
      write_text(vdir / "train_log.csv", e.log().csv());
      *ctx.err << display_name(v) << ": giving up after divergence\n";
      code = kExitDiverged;
      continue;
    }
    write_text(vdir / "train_log.csv", tm.log.csv());
    write_text(vdir / "timing.csv", tm.log.timing_csv());
    save_checkpoint((vdir / "checkpoint.bin").string(), tm.model, tm.seed);

    detail::SpiralEval ev;
    std::size_t n_recon = 0;
    for (std::size_t i = 0; i < data.train.size(); ++i) {
      const TimedSequence in = to_model(data.train[i]);
      const auto pred = predict(c, tm.model, in, model_grid);
      for (std::size_t j : data.indices[i]) {
        ev.recon += detail::sq_error(denormalize(pred[back_t.size() + j], stats), data.test[i].x[j]);
        ++n_recon;
      }
      for (std::size_t j = 0; j < back_t.size(); ++j) {
        ev.backward += detail::sq_error(denormalize(pred[j], stats), spiral_point(spec, data.shapes[i], back_t[j]));
      }
      for (std::size_t j = 0; j < fwd_t.size(); ++j) {
        const std::size_t at = back_t.size() + spec.dense_length + j;
        ev.forward += detail::sq_error(denormalize(pred[at], stats), spiral_point(spec, data.shapes[i], fwd_t[j]));
      }
      // One figure per turning direction: the first sequence of each.
      if (i == 0 || i == spec.n_per_direction) {
        const std::string dir = data.shapes[i].clockwise ? "cw" : "ccw";
        std::ostringstream csv;
        csv.precision(10);
        csv << "t,truth_x,truth_y,pred_x,pred_y\n";
        Polyline truth{{}, "#999999", 1.0, "truth"}, recon{{}, "#222222", 1.5, "reconstruction"},
            back{{}, "#1f5fd6", 2.0, "backward extrapolation"}, fwd{{}, "#d62728", 2.0, "forward extrapolation"};
        for (std::size_t j = 0; j < grid.size(); ++j) {
          const Vector y = denormalize(pred[j], stats);
          const Vector truth_pt = spiral_point(spec, data.shapes[i], grid[j]);
          csv << grid[j] << ',' << truth_pt[0] << ',' << truth_pt[1] << ',' << y[0] << ',' << y[1] << '\n';
          truth.points.push_back(truth_pt);
          if (j < back_t.size()) {
            back.points.push_back(y);
          } else if (j < back_t.size() + spec.dense_length) {
            recon.points.push_back(y);
          } else {
            fwd.points.push_back(y);
          }
        }
        // Join the segments so the curve is continuous.
        if (!back.points.empty()) back.points.push_back(recon.points.front());
        if (!fwd.points.empty()) fwd.points.insert(fwd.points.begin(), recon.points.back());
        Markers obs{data.train[i].x, "#ff8c00", 2.5, "observations"};
        write_text(vdir / ("trajectory_" + dir + ".csv"), csv.str());
        write_text(vdir / ("spiral_" + dir + ".svg"),
                   render_svg(display_name(v) + " (" + dir + ")", {truth, recon, back, fwd}, {obs}));
      }
    }
    const double n_seq = static_cast<double>(data.train.size());
    ev.recon /= static_cast<double>(n_recon) * 2.0;
    if (k_ext) {
      ev.backward /= n_seq * static_cast<double>(k_ext) * 2.0;
      ev.forward /= n_seq * static_cast<double>(k_ext) * 2.0;
    }
    const double ratio = tm.log.empty() ? 1.0 : tm.log.final_loss() / tm.log.initial_loss();
    std::ostringstream m;
    m.precision(10);
    m << "metric,value\n";
    if (!tm.log.empty()) {
      m << "initial_loss," << tm.log.initial_loss() << "\nfinal_loss," << tm.log.final_loss() << '\n';
    }
    m << "loss_ratio," << ratio << "\ndivergence_aborts," << tm.aborts << "\nrecon_mse," << ev.recon
      << "\nextrap_backward_mse," << ev.backward << "\nextrap_forward_mse," << ev.forward << '\n';
    write_text(vdir / "metrics.csv", m.str());
    summary << to_string(v) << ',' << (tm.log.empty() ? 0.0 : tm.log.initial_loss()) << ','
            << (tm.log.empty() ? 0.0 : tm.log.final_loss()) << ',' << ratio << ',' << tm.aborts << ','
            << ev.recon << ',' << ev.backward << ',' << ev.forward << '\n';
    out << display_name(v) << ": loss " << fmt_g(tm.log.empty() ? 0.0 : tm.log.initial_loss()) << " -> "
        << fmt_g(tm.log.empty() ? 0.0 : tm.log.final_loss()) << ", recon mse " << fmt_g(ev.recon)
        << ", extrapolation mse " << fmt_g(ev.backward) << " / " << fmt_g(ev.forward) << '\n';
  }
  write_text(ctx.run_dir / "metrics.csv", summary.str());
  out << "results in " << ctx.run_dir.string() << '\n';
  return code;
}

// ---------------------------------------------------------------------------
// timeseries

inline WindowSpec parse_window(const std::string& s) {
  const auto slash = s.find('/');
  std::int64_t a = 0, b = 0;
  if (slash == std::string::npos || !detail::parse_int(s.substr(0, slash), a) ||
      !detail::parse_int(s.substr(slash + 1), b) || a <= 0 || b <= 0) {
    throw SpecError("window '" + s + "' must look like seen/predict, e.g. 7/7");
  }
  return {static_cast<std::size_t>(a), static_cast<std::size_t>(b)};
}

/// Sample standard deviation; 0 for fewer than two values.
inline double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

struct TableCell {
  std::string window;
  Variant variant;
  std::vector<double> test_mse;
};

inline std::string format_table(const std::vector<TableCell>& cells, const std::vector<Variant>& variants) {
  std::ostringstream os;
  os << "| window |";
  for (Variant v : variants) os << ' ' << display_name(v) << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < variants.size(); ++i) os << "---|";
  os << '\n';
  for (std::size_t i = 0; i < cells.size(); i += variants.size()) {
    os << "| " << cells[i].window << " |";
    for (std::size_t j = 0; j < variants.size(); ++j) {
      const auto& cell = cells[i + j];
      char buf[64];
      std::snprintf(buf, sizeof buf, " %.4f ± %.4f |", mean_of(cell.test_mse), sample_std(cell.test_mse));
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

inline int cmd_timeseries(const RunContext& ctx) {
  const Config& c = ctx.config;
  std::ostream& out = *ctx.out;
  const std::string path = c.get_text("csv");
  if (path.empty()) throw SpecError("timeseries needs a CSV file (--csv or csv = ...)");
  const CsvSchema schema = parse_schema(c.get_text("schema"));
  CsvOptions opt;
  opt.ticker = c.get_text("ticker");
  const Series series = load_csv_daily(path, schema, opt);
  TimedSequence train, test;
  if (const std::string test_path = c.get_text("csv_test"); !test_path.empty()) {
    opt.origin_day = parse_iso_date(series.dates.front());
    train = series.seq;
    test = load_csv_daily(test_path, schema, opt).seq;
    if (!test.empty() && !train.empty() && !(test.t.front() > train.t.back())) {
      throw SpecError("test CSV must start after the training CSV ends");
    }
  } else {
    std::tie(train, test) = chronological_split(series.seq, c.get_real("train_fraction"));
  }
  if (train.empty() || test.empty()) throw SpecError("empty training or test split");
  const NormStats stats = compute_stats(train.x, series.features);
  for (const auto& w : stats.warnings) *ctx.err << "warning: " << w << '\n';
  const double time_scale = positive_real(c, "time_scale");
  train = scale_times(normalize(train, stats), time_scale);
  test = scale_times(normalize(test, stats), time_scale);

  std::vector<WindowSpec> windows;
  for (const auto& w : c.get_texts("windows")) windows.push_back(parse_window(w));
  if (windows.empty()) throw SpecError("no windows selected");
  const auto variants = config_variants(c);
  const std::size_t repeats = c.get_size("repeats");
  if (repeats == 0) throw SpecError("repeats must be >= 1");
  const std::uint64_t seed = static_cast<std::uint64_t>(c.get_int("seed"));
  record_run(ctx);
  out << "series " << path << ": " << train.size() << " training and " << test.size() << " test points, "
      << series.features.size() << " features\n";

  std::ostringstream runs;
  runs.precision(10);
  runs << "window,variant,repeat,seed,initial_loss,final_loss,test_mse\n";
  std::vector<TableCell> cells;
  int code = kExitOk;
  for (const WindowSpec& w : windows) {
    const auto train_pairs = window(train, w);
    if (train_pairs.empty()) {
      throw SpecError("window " + w.label() + " needs " + std::to_string(w.seen + w.predict) +
                      " training points, have " + std::to_string(train.size()));
    }
    const auto test_pairs = forecast_windows(train, test, w);
    if (test_pairs.empty()) {
      throw SpecError("window " + w.label() + " has no complete test window in " + std::to_string(test.size()) +
                      " test points");
    }
    std::vector<Example> examples;
    for (const auto& p : train_pairs) examples.push_back({p.seen, p.future.t, p.future.x});
    std::string tag = w.label().substr(1);
    tag[tag.find('/')] = '-';
    tag = "D" + tag;
    for (const Variant v : variants) {
      TableCell cell{w.label(), v, {}};
      for (std::size_t r = 0; r < repeats; ++r) {
        const std::uint64_t s = mix_seed(seed, r);
        TrainedModel tm;
        try {
          tm = train_variant(c, v, examples, s, *ctx.err);
        } catch (const TrainingDiverged&) {
          code = kExitDiverged;
          cell.test_mse.push_back(std::nan(""));
          runs << w.label() << ',' << to_string(v) << ',' << r << ',' << s << ",nan,nan,nan\n";
          continue;
        }
        double err = 0.0;
        for (const auto& p : test_pairs) err += mse(predict(c, tm.model, p.seen, p.future.t), p.future.x);
        err /= static_cast<double>(test_pairs.size());
        cell.test_mse.push_back(err);
        const fs::path base = ctx.run_dir / tag / to_string(v);
        const std::string rs = "r" + std::to_string(r);
        write_text(base / ("train_log_" + rs + ".csv"), tm.log.csv());
        write_text(base / ("timing_" + rs + ".csv"), tm.log.timing_csv());
        save_checkpoint((base / ("checkpoint_" + rs + ".bin")).string(), tm.model, tm.seed);
        runs << w.label() << ',' << to_string(v) << ',' << r << ',' << tm.seed << ','
             << (tm.log.empty() ? 0.0 : tm.log.initial_loss()) << ',' << (tm.log.empty() ? 0.0 : tm.log.final_loss())
             << ',' << err << '\n';
      }
      out << w.label() << ' ' << display_name(v) << ": test mse " << fmt_g(mean_of(cell.test_mse)) << " ± "
          << fmt_g(sample_std(cell.test_mse)) << '\n';
      cells.push_back(std::move(cell));
    }
  }
  std::ostringstream table;
  table.precision(10);
  table << "window,variant,mean_mse,std_mse,repeats\n";
  for (const auto& cell : cells) {
    table << cell.window << ',' << to_string(cell.variant) << ',' << mean_of(cell.test_mse) << ','
          << sample_std(cell.test_mse) << ',' << cell.test_mse.size() << '\n';
  }
  const std::string md = format_table(cells, variants);
  write_text(ctx.run_dir / "runs.csv", runs.str());
  write_text(ctx.run_dir / "table.csv", table.str());
  write_text(ctx.run_dir / "table.md", md);
  out << '\n' << md << "results in " << ctx.run_dir.string() << '\n';
  return code;
}

// ---------------------------------------------------------------------------
// gradcheck

inline int cmd_gradcheck(const RunContext& ctx) {
  const Config& c = ctx.config;
  std::ostream& out = *ctx.out;
  GradcheckOptions o;
  o.seed = static_cast<std::uint64_t>(c.get_int("seed"));
  o.h = positive_real(c, "fd_step");
  const double tol = positive_real(c, "tolerance");
  GradcheckSelection sel;
  const std::string which = c.get_text("gradcheck_model");
  if (which == "cells") {
    sel = {true, false, false};
  } else if (which == "latent-ode-rnn") {
    sel = {false, true, false};
  } else if (which == "latent-ode-lstm" || which == "latent-ode-lstm-gc") {
    sel = {false, false, true};
  } else if (which != "all") {
    throw SpecError("gradcheck_model must be all, cells, latent-ode-rnn, latent-ode-lstm or latent-ode-lstm-gc");
  }
  record_run(ctx);
  const auto reports = run_gradcheck_suite(o, sel);
  std::ostringstream csv;
  csv.precision(6);
  csv << std::scientific << "subject,block,rel_error,pass\n";
  bool ok = true;
  for (const auto& r : reports) {
    const bool pass = r.passes(tol);
    ok = ok && pass;
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-16s max rel error %.3e  %s", r.subject.c_str(), r.max_error(),
                  pass ? "PASS" : "FAIL");
    out << buf << '\n';
    for (const auto& b : r.blocks) {
      csv << r.subject << ',' << b.name << ',' << b.rel_error << ',' << (b.rel_error <= tol ? 1 : 0) << '\n';
      if (b.rel_error > tol) out << "  " << b.name << ": " << b.rel_error << '\n';
    }
  }
  write_text(ctx.run_dir / "gradcheck.csv", csv.str());
  out << (ok ? "all gradients within " : "gradient check FAILED at tolerance ") << tol << '\n';
  return ok ? kExitOk : kExitCheckFailed;
}

// ---------------------------------------------------------------------------
// gradflow

inline int cmd_gradflow(const RunContext& ctx) {
  const Config& c = ctx.config;
  std::ostream& out = *ctx.out;
  std::vector<ProbeCell> cells;
  for (const auto& s : c.get_texts("cells")) cells.push_back(parse_probe_cell(s));
  const auto scales = c.get_reals("scales");
  const auto lengths = c.get_reals("lengths");
  if (cells.empty() || scales.empty() || lengths.empty()) throw SpecError("gradflow needs cells, scales and lengths");
  record_run(ctx);
  std::ostringstream summary;
  summary.precision(10);
  summary << "cell,scale,length,slope,regime,spectral_radius,operator_norm,bound_slope_radius,bound_slope_norm\n";
  for (ProbeCell cell : cells) {
    for (double len : lengths) {
      if (len < 1.0 || len != std::floor(len)) throw SpecError("gradflow lengths must be positive integers");
      for (double scale : scales) {
        ProbeConfig p;
        p.cell = cell;
        p.scale = scale;
        p.length = static_cast<std::size_t>(len);
        p.hidden = c.get_size("probe_hidden");
        p.input_scale = c.get_real("input_scale");
        p.carousel = c.get_bool("carousel");
        p.seed = static_cast<std::uint64_t>(c.get_int("seed"));
        const GradReport r = grad_flow_probe(p);
        const std::string name = to_string(cell) + "_s" + fmt_g(scale) + "_N" + std::to_string(p.length);
        write_text(ctx.run_dir / (name + ".csv"), r.csv());
        const std::string slope = r.slope ? fmt_g(*r.slope, 10) : "";
        summary << to_string(cell) << ',' << scale << ',' << p.length << ',' << slope << ',' << to_string(r.regime)
                << ',' << r.spectral_radius << ',' << r.operator_norm << ',' << r.bound_slope_radius << ','
                << r.bound_slope_norm << '\n';
        char buf[160];
        std::snprintf(buf, sizeof buf, "%-8s s=%-6g N=%-4zu slope=%-12s %-9s rho=%.4f ||W||=%.4f", to_string(cell).c_str(),
                      scale, p.length, r.slope ? fmt_g(*r.slope, 5).c_str() : "undefined",
                      to_string(r.regime).c_str(), r.spectral_radius, r.operator_norm);
        out << buf << '\n';
      }
    }
  }
  write_text(ctx.run_dir / "summary.csv", summary.str());
  out << "results in " << ctx.run_dir.string() << '\n';
  return kExitOk;
}

}  // namespace lode::cli
