#pragma once

// Datasets: bidirectional Archimedean spirals, daily CSV series, z-score
// normalization, and seen/predict windowing.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lode/binio.hpp"
#include "lode/errors.hpp"
#include "lode/numcore.hpp"
#include "lode/sequence.hpp"

namespace lode {

// ---------------------------------------------------------------------------
// Spirals

struct SpiralSpec {
  std::size_t n_per_direction = 100;
  std::size_t dense_length = 500;
  std::size_t n_obs = 30;
  double noise_std = 0.1;
  /// r = a + b * phi with phi in [phi_min, phi_max].
  double a = 0.0;
  double b = 0.3;
  double phi_min = 1.0;
  double phi_max = 6.0 * std::numbers::pi;
  /// The dense grid spans t in [0, t_max].
  double t_max = 6.0 * std::numbers::pi;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_per_direction == 0) throw SpecError("SpiralSpec: n_per_direction must be >= 1");
    if (dense_length < 2) throw SpecError("SpiralSpec: dense_length must be >= 2");
    if (n_obs == 0 || n_obs > dense_length) {
      throw SpecError("SpiralSpec: n_obs = " + std::to_string(n_obs) + " must be in [1, " +
                      std::to_string(dense_length) + "]");
    }
    if (!(noise_std >= 0.0)) throw SpecError("SpiralSpec: noise_std must be >= 0");
    if (!(phi_max > phi_min) || !(t_max > 0.0)) throw SpecError("SpiralSpec: empty parameter range");
  }

  /// Stable text form used for snapshot hashing.
  std::string describe() const {
    std::ostringstream os;
    os.precision(17);
    os << "spiral n=" << n_per_direction << " dense=" << dense_length << " obs=" << n_obs
       << " noise=" << noise_std << " a=" << a << " b=" << b << " phi=[" << phi_min << ','
       << phi_max << "] T=" << t_max << " seed=" << seed;
    return os.str();
  }
};

/// One spiral instance: start phase and turning direction.
struct SpiralShape {
  double phase = 0.0;
  bool clockwise = false;
};

/// Point at time t; times outside [0, t_max] continue the same curve.
inline Vector spiral_point(const SpiralSpec& s, const SpiralShape& shape, double t) {
  const double phi = s.phi_min + (s.phi_max - s.phi_min) * t / s.t_max;
  const double r = s.a + s.b * phi;
  const double angle = shape.phase + (shape.clockwise ? -phi : phi);
  return Vector{r * std::cos(angle), r * std::sin(angle)};
}

inline double spiral_grid_time(const SpiralSpec& s, std::size_t j) {
  return s.t_max * static_cast<double>(j) / static_cast<double>(s.dense_length - 1);
}

struct SpiralData {
  SpiralSpec spec;
  std::vector<SpiralShape> shapes;
  /// Noisy subsampled observations, n_obs per sequence.
  std::vector<TimedSequence> train;
  /// Noise-free dense curves, dense_length per sequence.
  std::vector<TimedSequence> test;
  /// Grid indices behind each training sequence.
  std::vector<std::vector<std::size_t>> indices;
};

/// Counterclockwise sequences first, then clockwise ones.
inline SpiralData gen_spirals(const SpiralSpec& spec) {
  spec.validate();
  SpiralData d;
  d.spec = spec;
  Rng rng(spec.seed);
  const std::size_t total = 2 * spec.n_per_direction;
  for (std::size_t s = 0; s < total; ++s) {
    const SpiralShape shape{rng.uniform(0.0, 2.0 * std::numbers::pi), s >= spec.n_per_direction};
    TimedSequence dense;
    for (std::size_t j = 0; j < spec.dense_length; ++j) {
      const double t = spiral_grid_time(spec, j);
      dense.push_back(spiral_point(spec, shape, t), t);
    }
    // Partial Fisher-Yates: the first n_obs entries are a uniform random subset.
    std::vector<std::size_t> pool(spec.dense_length);
    for (std::size_t j = 0; j < pool.size(); ++j) pool[j] = j;
    for (std::size_t j = 0; j < spec.n_obs; ++j) std::swap(pool[j], pool[j + rng.index(pool.size() - j)]);
    std::vector<std::size_t> idx(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(spec.n_obs));
    std::sort(idx.begin(), idx.end());
    TimedSequence obs;
    for (std::size_t j : idx) {
      Vector x = dense.x[j];
      if (spec.noise_std > 0.0)
        for (double& v : x) v += spec.noise_std * rng.normal();
      obs.push_back(std::move(x), dense.t[j]);
    }
    d.shapes.push_back(shape);
    d.train.push_back(std::move(obs));
    d.test.push_back(std::move(dense));
    d.indices.push_back(std::move(idx));
  }
  return d;
}

/// Sign of the summed cross products of successive displacements: +1 for
/// counterclockwise motion, -1 for clockwise.
inline int chirality(const TimedSequence& seq) {
  double s = 0.0;
  for (std::size_t i = 2; i < seq.size(); ++i) {
    const double ax = seq.x[i - 1][0] - seq.x[i - 2][0], ay = seq.x[i - 1][1] - seq.x[i - 2][1];
    const double bx = seq.x[i][0] - seq.x[i - 1][0], by = seq.x[i][1] - seq.x[i - 1][1];
    s += ax * by - ay * bx;
  }
  return s > 0 ? 1 : (s < 0 ? -1 : 0);
}

// ---------------------------------------------------------------------------
// Snapshots

inline constexpr char kSnapshotMagic[8] = {'L', 'O', 'D', 'E', 'S', 'N', 'A', 'P'};

/// FNV-1a, 64 bit.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct Snapshot {
  std::uint64_t seed = 0;
  std::uint64_t spec_hash = 0;
  std::vector<TimedSequence> sequences;
};

inline std::vector<char> serialize_snapshot(const Snapshot& s) {
  detail::ByteWriter w;
  w.raw(kSnapshotMagic, sizeof kSnapshotMagic);
  w.u32(1);
  w.u64(s.seed);
  w.u64(s.spec_hash);
  w.u64(s.sequences.size());
  for (const auto& seq : s.sequences) {
    w.u64(seq.size());
    w.u64(seq.dim());
    for (std::size_t i = 0; i < seq.size(); ++i) {
      w.f64(seq.t[i]);
      for (double v : seq.x[i]) w.f64(v);
    }
  }
  return w.bytes();
}

inline Snapshot deserialize_snapshot(std::vector<char> bytes) {
  detail::ByteReader r(std::move(bytes));
  char magic[8];
  r.raw(magic, sizeof magic);
  if (!std::equal(magic, magic + 8, kSnapshotMagic)) throw SchemaError("snapshot: bad magic");
  if (r.u32() != 1) throw SchemaError("snapshot: unsupported version");
  Snapshot s;
  s.seed = r.u64();
  s.spec_hash = r.u64();
  const std::uint64_t count = r.u64();
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::uint64_t len = r.u64(), dim = r.u64();
    TimedSequence seq;
    for (std::uint64_t i = 0; i < len; ++i) {
      const double t = r.f64();
      Vector x(dim);
      for (double& v : x) v = r.f64();
      seq.push_back(std::move(x), t);
    }
    s.sequences.push_back(std::move(seq));
  }
  if (!r.at_end()) throw SchemaError("snapshot: trailing bytes");
  return s;
}

/// Training sequences with the seed and spec hash embedded.
inline Snapshot spiral_snapshot(const SpiralData& d) {
  return Snapshot{d.spec.seed, fnv1a(d.spec.describe()), d.train};
}

// ---------------------------------------------------------------------------
// CSV series

enum class CsvSchema { Climate, Stock };

inline std::string to_string(CsvSchema s) { return s == CsvSchema::Climate ? "climate" : "stock"; }

inline CsvSchema parse_schema(const std::string& s) {
  if (s == "climate") return CsvSchema::Climate;
  if (s == "stock") return CsvSchema::Stock;
  throw SpecError("unknown CSV schema '" + s + "' (expected climate or stock)");
}

struct SchemaColumns {
  std::string date;
  std::vector<std::string> features;
  /// Optional column used to select one instrument.
  std::string ticker;
};

/// climate: date, meantemp, humidity, wind_speed, meanpressure.
/// stock:   Date, Open, High, Low (Close, Volume and Name are not features;
///          Name selects a ticker when requested).
inline SchemaColumns schema_columns(CsvSchema s) {
  if (s == CsvSchema::Climate) return {"date", {"meantemp", "humidity", "wind_speed", "meanpressure"}, ""};
  return {"Date", {"Open", "High", "Low"}, "Name"};
}

struct Series {
  TimedSequence seq;
  std::vector<std::string> features;
  std::vector<std::string> dates;
};

/// Days since 1970-01-01 for an ISO yyyy-mm-dd date (a time suffix is ignored).
inline std::optional<long> parse_iso_date(std::string_view s) {
  if (s.size() < 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  int y = 0;
  unsigned m = 0, d = 0;
  auto num = [&](std::string_view part, auto& out) {
    const auto r = std::from_chars(part.data(), part.data() + part.size(), out);
    return r.ec == std::errc() && r.ptr == part.data() + part.size();
  };
  if (!num(s.substr(0, 4), y) || !num(s.substr(5, 2), m) || !num(s.substr(8, 2), d)) return std::nullopt;
  if (s.size() > 10 && s[10] != ' ' && s[10] != 'T') return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) return std::nullopt;
  return static_cast<long>(std::chrono::sys_days{ymd}.time_since_epoch().count());
}

namespace detail {

inline std::string trim_field(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  s = s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') quoted = !quoted;
    if (c == ',' && !quoted) {
      out.push_back(trim_field(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim_field(cur));
  return out;
}

inline std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + v[i];
  return s;
}

}  // namespace detail

struct CsvOptions {
  /// Keep only rows whose ticker column equals this value (stock schema).
  std::string ticker;
  /// Day offsets are measured from this date; defaults to the first row.
  std::optional<long> origin_day;
};

/// Parses a daily CSV into day-offset timestamps and schema feature columns.
inline Series parse_csv_daily(std::istream& in, CsvSchema schema, const CsvOptions& opt = {},
                              const std::string& source = "<csv>") {
  const SchemaColumns cols = schema_columns(schema);
  if (!opt.ticker.empty() && cols.ticker.empty()) {
    throw SpecError(source + ": ticker filter requires the stock schema");
  }
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!detail::trim_field(line).empty()) {
      header = detail::split_csv_line(line);
      break;
    }
  }
  if (!header.empty() && header[0].size() >= 3 && header[0].compare(0, 3, "\xEF\xBB\xBF") == 0) {
    header[0] = header[0].substr(3);
  }
  auto find = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  };
  std::vector<std::string> expected{cols.date};
  expected.insert(expected.end(), cols.features.begin(), cols.features.end());
  if (!opt.ticker.empty()) expected.push_back(cols.ticker);
  std::vector<std::size_t> pos;
  std::vector<std::string> missing;
  for (const auto& name : expected) {
    if (const auto p = find(name)) pos.push_back(*p);
    else missing.push_back(name);
  }
  if (!missing.empty()) {
    throw SchemaError(source + ": " + to_string(schema) + " schema expects columns [" +
                      detail::join(expected) + "], found [" + detail::join(header) + "]; missing [" +
                      detail::join(missing) + "]");
  }

  Series out;
  out.features = cols.features;
  std::optional<long> origin = opt.origin_day;
  double last_t = -std::numeric_limits<double>::infinity();
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim_field(line).empty()) continue;
    const auto fields = detail::split_csv_line(line);
    auto bad = [&](const std::string& why) {
      throw SchemaError(source + ": line " + std::to_string(line_no) + ": " + why);
    };
    if (fields.size() != header.size()) {
      bad("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
    }
    if (!opt.ticker.empty() && fields[pos.back()] != opt.ticker) continue;
    const auto day = parse_iso_date(fields[pos[0]]);
    if (!day) bad("cannot parse date '" + fields[pos[0]] + "'");
    if (!origin) origin = *day;
    Vector x(cols.features.size());
    for (std::size_t f = 0; f < x.size(); ++f) {
      const std::string& s = fields[pos[f + 1]];
      double v = 0.0;
      const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
      if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v)) {
        bad("cannot parse " + cols.features[f] + " value '" + s + "'");
      }
      x[f] = v;
    }
    const double t = static_cast<double>(*day - *origin);
    if (!(t > last_t)) bad("date " + fields[pos[0]] + " does not increase");
    last_t = t;
    out.seq.push_back(std::move(x), t);
    out.dates.push_back(fields[pos[0]]);
  }
  return out;
}

inline Series load_csv_daily(const std::string& path, CsvSchema schema, const CsvOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw SpecError("cannot open CSV file '" + path + "'");
  return parse_csv_daily(in, schema, opt, path);
}

// ---------------------------------------------------------------------------
// Normalization

struct NormStats {
  Vector mean;
  Vector std;
  std::vector<std::string> warnings;
};

/// Per-feature mean and population standard deviation. A constant feature
/// keeps std = 1 and records a warning.
inline NormStats compute_stats(const std::vector<Vector>& rows,
                               const std::vector<std::string>& names = {}) {
  if (rows.empty()) throw SpecError("compute_stats: no rows");
  const std::size_t p = rows.front().size();
  NormStats s{Vector(p), Vector(p), {}};
  for (const auto& r : rows) s.mean += r;
  s.mean *= 1.0 / static_cast<double>(rows.size());
  for (const auto& r : rows)
    for (std::size_t j = 0; j < p; ++j) s.std[j] += (r[j] - s.mean[j]) * (r[j] - s.mean[j]);
  for (std::size_t j = 0; j < p; ++j) {
    s.std[j] = std::sqrt(s.std[j] / static_cast<double>(rows.size()));
    if (s.std[j] == 0.0) {
      s.std[j] = 1.0;
      s.warnings.push_back("feature " + (j < names.size() ? names[j] : std::to_string(j)) +
                           " has zero variance; std set to 1");
    }
  }
  return s;
}

inline Vector normalize(const Vector& x, const NormStats& s) {
  Vector out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - s.mean[j]) / s.std[j];
  return out;
}

inline Vector denormalize(const Vector& z, const NormStats& s) {
  Vector out(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) out[j] = z[j] * s.std[j] + s.mean[j];
  return out;
}

inline TimedSequence normalize(const TimedSequence& seq, const NormStats& s) {
  TimedSequence out;
  for (std::size_t i = 0; i < seq.size(); ++i) out.push_back(normalize(seq.x[i], s), seq.t[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Splits and windows

struct WindowSpec {
  std::size_t seen = 7;
  std::size_t predict = 7;

  std::string label() const { return "D" + std::to_string(seen) + "/" + std::to_string(predict); }
};

inline const std::vector<WindowSpec>& standard_windows() {
  static const std::vector<WindowSpec> w{{7, 7}, {15, 15}, {30, 30}, {365, 60}};
  return w;
}

struct WindowPair {
  TimedSequence seen;
  TimedSequence future;
};

/// Consecutive non-overlapping (seen, future) pairs; a short remainder is dropped.
inline std::vector<WindowPair> window(const TimedSequence& seq, const WindowSpec& spec) {
  if (spec.seen == 0 || spec.predict == 0) throw SpecError("window: lengths must be >= 1");
  std::vector<WindowPair> out;
  const std::size_t span = spec.seen + spec.predict;
  for (std::size_t first = 0; first + span <= seq.size(); first += span) {
    out.push_back({seq.slice(first, spec.seen), seq.slice(first + spec.seen, spec.predict)});
  }
  return out;
}

/// Test-time pairs: futures tile `test` consecutively; each seen window is the
/// `spec.seen` points just before its future, reaching back into `train` when needed.
inline std::vector<WindowPair> forecast_windows(const TimedSequence& train, const TimedSequence& test,
                                                const WindowSpec& spec) {
  if (spec.seen == 0 || spec.predict == 0) throw SpecError("forecast_windows: lengths must be >= 1");
  TimedSequence all = train;
  for (std::size_t i = 0; i < test.size(); ++i) all.push_back(test.x[i], test.t[i]);
  std::vector<WindowPair> out;
  for (std::size_t f = 0; f + spec.predict <= test.size(); f += spec.predict) {
    const std::size_t at = train.size() + f;
    if (at < spec.seen) continue;
    out.push_back({all.slice(at - spec.seen, spec.seen), all.slice(at, spec.predict)});
  }
  return out;
}

/// Chronological split: the first round(fraction * n) points train.
inline std::pair<TimedSequence, TimedSequence> chronological_split(const TimedSequence& seq,
                                                                   double train_fraction = 0.75) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw SpecError("chronological_split: fraction must be in (0, 1)");
  }
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(seq.size())));
  return {seq.slice(0, n_train), seq.slice(n_train, seq.size() - n_train)};
}

}  // namespace lode
