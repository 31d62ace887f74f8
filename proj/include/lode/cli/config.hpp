#pragma once

// Flat typed `key = value` run configuration with named presets.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lode/errors.hpp"

namespace lode::cli {

enum class ValueType { Int, Real, Bool, Text, RealList, TextList };

struct ConfigEntry {
  std::string key;
  ValueType type;
  std::string value;
  std::string help;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

inline bool parse_real(const std::string& s, double& v) {
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  return r.ec == std::errc() && r.ptr == s.data() + s.size() && std::isfinite(v);
}

inline bool parse_int(const std::string& s, std::int64_t& v) {
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

inline bool parse_bool(const std::string& s, bool& v) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return v = true, true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return v = false, true;
  return false;
}

}  // namespace detail

class Config {
 public:
  /// Every recognised key with its default value.
  static Config defaults() {
    Config c;
    using T = ValueType;
    // General
    c.add("seed", T::Int, "7", "master random seed");
    c.add("variants", T::TextList, "latent-ode-rnn,latent-ode-lstm,latent-ode-lstm-gc",
          "model variants to run");
    c.add("threads", T::Int, "1", "worker threads for per-example passes");
    c.add("retries", T::Int, "0", "reseeded retries after a training divergence");
    // Model
    c.add("hidden", T::Int, "16", "encoder hidden size n");
    c.add("enc_field_hidden", T::Int, "16", "hidden units of the encoder vector field");
    c.add("g_hidden", T::Int, "16", "hidden units of the translator g");
    c.add("latent_dim", T::Int, "4", "latent dimension l");
    c.add("dec_field_hidden", T::Int, "16", "hidden units of the decoder vector field");
    c.add("out_hidden", T::Int, "16", "hidden units of the output network");
    c.add("encoder_steps", T::Int, "2", "RK4 steps between observations in the encoder");
    c.add("decoder_steps", T::Int, "2", "RK4 steps between requested times in the decoder");
    c.add("init_log_sigma", T::Real, "0", "initial bias of the log-sigma lanes of g");
    c.add("eval_solver", T::Text, "rk4", "decoder solver for evaluation: rk4 or dopri5");
    c.add("eval_rtol", T::Real, "1e-6", "dopri5 relative tolerance");
    c.add("eval_atol", T::Real, "1e-8", "dopri5 absolute tolerance");
    // Training
    c.add("epochs", T::Int, "200", "training epochs");
    c.add("batch_size", T::Int, "20", "sequences per Adam step");
    c.add("lr", T::Real, "0.01", "Adam learning rate");
    c.add("kl_weight", T::Real, "0", "weight of the KL term (0 = reconstruction only)");
    c.add("clip", T::Real, "1.0", "global-norm clipping threshold for the +GC variant");
    // Spiral
    c.add("n_per_direction", T::Int, "100", "spirals per turning direction");
    c.add("n_obs", T::Int, "30", "observations per training spiral");
    c.add("dense_length", T::Int, "500", "points on each dense spiral");
    c.add("noise_std", T::Real, "0.1", "observation noise standard deviation");
    c.add("spiral_a", T::Real, "0", "spiral offset a in r = a + b phi");
    c.add("spiral_b", T::Real, "0.3", "spiral growth b in r = a + b phi");
    c.add("extrapolate_fraction", T::Real, "0.05", "extrapolation margin as a fraction of T");
    c.add("normalize", T::Bool, "true", "z-score inputs with training statistics");
    c.add("snapshot", T::Bool, "false", "write a binary dataset snapshot");
    // Time series
    c.add("csv", T::Text, "", "training CSV path");
    c.add("csv_test", T::Text, "", "optional test CSV path (otherwise a chronological split)");
    c.add("schema", T::Text, "climate", "CSV schema: climate or stock");
    c.add("ticker", T::Text, "", "stock ticker to keep (stock schema)");
    c.add("train_fraction", T::Real, "0.75", "chronological training fraction without csv_test");
    c.add("windows", T::TextList, "7/7,15/15,30/30,365/60", "seen/predict window pairs");
    c.add("repeats", T::Int, "3", "training repeats per window and variant");
    c.add("time_scale", T::Real, "1", "data time units per model time unit");
    // Gradcheck
    c.add("tolerance", T::Real, "1e-5", "maximum relative error per parameter block");
    c.add("gradcheck_model", T::Text, "all",
          "all, cells, latent-ode-rnn, latent-ode-lstm or latent-ode-lstm-gc");
    c.add("fd_step", T::Real, "1e-5", "centered finite-difference step");
    // Gradflow
    c.add("scales", T::RealList, "0.3,1.0,3.0", "spectral radii to probe");
    c.add("cells", T::TextList, "rnn,lstm", "cell types to probe");
    c.add("lengths", T::RealList, "50", "chain lengths to probe");
    c.add("probe_hidden", T::Int, "8", "hidden size of probed cells");
    c.add("input_scale", T::Real, "0", "input magnitude for probes (0 = linear operating point)");
    c.add("carousel", T::Bool, "false", "saturate LSTM forget/input gates in probes");
    return c;
  }

  const std::vector<ConfigEntry>& entries() const { return entries_; }

  bool has(const std::string& key) const { return find(key) != nullptr; }

  /// Sets a known key after checking the value against its type.
  void set(const std::string& key, const std::string& raw, const std::string& where = "") {
    ConfigEntry* e = find(key);
    if (!e) throw SpecError(prefix(where) + "unknown config key '" + key + "'");
    const std::string v = detail::trim(raw);
    auto bad = [&](const char* what) {
      throw SpecError(prefix(where) + "key '" + key + "' expects " + what + ", got '" + v + "'");
    };
    std::int64_t i = 0;
    double d = 0.0;
    bool b = false;
    switch (e->type) {
      case ValueType::Int:
        if (!detail::parse_int(v, i) || i < 0) bad("a non-negative integer");
        break;
      case ValueType::Real:
        if (!detail::parse_real(v, d)) bad("a finite number");
        break;
      case ValueType::Bool:
        if (!detail::parse_bool(v, b)) bad("true or false");
        break;
      case ValueType::RealList:
        for (const auto& item : detail::split_list(v))
          if (!detail::parse_real(item, d)) bad("a comma-separated list of numbers");
        break;
      case ValueType::Text:
      case ValueType::TextList:
        break;
    }
    e->value = v;
  }

  /// Applies `key = value` lines; '#' starts a comment.
  void merge_text(const std::string& text, const std::string& source) {
    std::istringstream in(text);
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
      ++no;
      if (const auto h = line.find('#'); h != std::string::npos) line = line.substr(0, h);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      const std::string where = source + ":" + std::to_string(no);
      if (eq == std::string::npos) throw SpecError(where + ": expected 'key = value'");
      set(detail::trim(line.substr(0, eq)), line.substr(eq + 1), where);
    }
  }

  void merge_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SpecError("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    merge_text(ss.str(), path);
  }

  std::int64_t get_int(const std::string& key) const {
    std::int64_t v = 0;
    detail::parse_int(get(key, ValueType::Int), v);
    return v;
  }
  std::size_t get_size(const std::string& key) const { return static_cast<std::size_t>(get_int(key)); }
  double get_real(const std::string& key) const {
    double v = 0.0;
    detail::parse_real(get(key, ValueType::Real), v);
    return v;
  }
  bool get_bool(const std::string& key) const {
    bool v = false;
    detail::parse_bool(get(key, ValueType::Bool), v);
    return v;
  }
  std::string get_text(const std::string& key) const { return get(key, ValueType::Text); }
  std::vector<std::string> get_texts(const std::string& key) const {
    return detail::split_list(get(key, ValueType::TextList));
  }
  std::vector<double> get_reals(const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : detail::split_list(get(key, ValueType::RealList))) {
      double v = 0.0;
      detail::parse_real(s, v);
      out.push_back(v);
    }
    return out;
  }

  /// Resolved configuration in the same `key = value` form it is read from.
  std::string dump() const {
    std::string out;
    for (const auto& e : entries_) out += e.key + " = " + e.value + "\n";
    return out;
  }

 private:
  void add(std::string key, ValueType t, std::string value, std::string help) {
    entries_.push_back({std::move(key), t, std::move(value), std::move(help)});
  }
  ConfigEntry* find(const std::string& key) {
    for (auto& e : entries_)
      if (e.key == key) return &e;
    return nullptr;
  }
  const ConfigEntry* find(const std::string& key) const {
    for (const auto& e : entries_)
      if (e.key == key) return &e;
    return nullptr;
  }
  const std::string& get(const std::string& key, ValueType t) const {
    const ConfigEntry* e = find(key);
    if (!e) throw SpecError("unknown config key '" + key + "'");
    if (e->type != t) throw SpecError("config key '" + key + "' read with the wrong type");
    return e->value;
  }
  static std::string prefix(const std::string& where) { return where.empty() ? "" : where + ": "; }

  std::vector<ConfigEntry> entries_;
};

// ---------------------------------------------------------------------------
// Presets

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> n{"desk-spiral", "desk-timeseries", "paper-spiral",
                                          "paper-climate", "paper-djia", "lstm-carousel"};
  return n;
}

/// Preset settings as config text.
///
/// paper-spiral: 20-unit encoder and fields, 20-unit output network, lr 0.01,
/// batch 1000, 750 epochs. The 25-unit layer listed with the encoder is taken
/// as the hidden layer of the translator g.
/// paper-climate / paper-djia: 4-unit encoder, 25-unit fields, 256-unit output
/// network, lr 0.0005, 50 or 100 epochs, 3 repeats, adaptive evaluation.
/// Desk presets shrink these to run in minutes on one core.
inline std::string preset_text(const std::string& name) {
  if (name == "desk-spiral") {
    return "n_per_direction = 100\nn_obs = 30\nepochs = 200\nbatch_size = 20\nlr = 0.01\n"
           "hidden = 16\nenc_field_hidden = 16\ng_hidden = 16\nlatent_dim = 4\n"
           "dec_field_hidden = 16\nout_hidden = 16\nencoder_steps = 2\ndecoder_steps = 2\n"
           "normalize = true\ntime_scale = 8\ninit_log_sigma = -3\nseed = 7\n";
  }
  if (name == "paper-spiral") {
    return "n_per_direction = 500\nn_obs = 30\nepochs = 750\nbatch_size = 1000\nlr = 0.01\n"
           "hidden = 20\nenc_field_hidden = 20\ng_hidden = 25\nlatent_dim = 4\n"
           "dec_field_hidden = 20\nout_hidden = 20\nencoder_steps = 4\ndecoder_steps = 4\n";
  }
  if (name == "desk-timeseries") {
    return "epochs = 100\nbatch_size = 16\nlr = 0.01\nrepeats = 2\ntime_scale = 10\nhidden = 4\n"
           "enc_field_hidden = 8\ng_hidden = 8\nlatent_dim = 4\ndec_field_hidden = 8\n"
           "out_hidden = 16\nencoder_steps = 1\ndecoder_steps = 1\n";
  }
  if (name == "paper-climate" || name == "paper-djia") {
    std::string s =
        "batch_size = 32\nlr = 0.0005\nrepeats = 3\nhidden = 4\nenc_field_hidden = 25\n"
        "g_hidden = 25\nlatent_dim = 4\ndec_field_hidden = 25\nout_hidden = 256\n"
        "encoder_steps = 2\ndecoder_steps = 2\neval_solver = dopri5\ntime_scale = 10\n"
        "windows = 7/7,15/15,30/30,365/60\n";
    if (name == "paper-climate") return s + "schema = climate\nepochs = 50\n";
    return s + "schema = stock\nepochs = 100\ntrain_fraction = 0.75\n";
  }
  if (name == "lstm-carousel") return "cells = lstm\ncarousel = true\nscales = 1.0\n";
  throw SpecError("unknown preset '" + name + "'");
}

inline void apply_preset(Config& c, const std::string& name) { c.merge_text(preset_text(name), "preset " + name); }

}  // namespace lode::cli
