#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "lode/data.hpp"

namespace lode {
namespace {

SpiralSpec small_spiral(std::uint64_t seed = 1) {
  SpiralSpec s;
  s.n_per_direction = 5;
  s.n_obs = 30;
  s.seed = seed;
  return s;
}

TEST(Spirals, ShapesAndCounts) {
  const auto d = gen_spirals(small_spiral());
  ASSERT_EQ(d.train.size(), 10u);
  ASSERT_EQ(d.test.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(d.train[i].size(), 30u);
    EXPECT_EQ(d.test[i].size(), 500u);
    EXPECT_NO_THROW(d.train[i].validate());
    EXPECT_DOUBLE_EQ(d.test[i].t.front(), 0.0);
    EXPECT_DOUBLE_EQ(d.test[i].t.back(), 6.0 * std::numbers::pi);
  }
}

TEST(Spirals, ZeroNoiseLiesOnCurve) {
  auto spec = small_spiral();
  spec.noise_std = 0.0;
  const auto d = gen_spirals(spec);
  for (std::size_t s = 0; s < d.train.size(); ++s)
    for (std::size_t k = 0; k < d.train[s].size(); ++k) {
      EXPECT_EQ(d.train[s].x[k], d.test[s].x[d.indices[s][k]]);
      EXPECT_EQ(d.train[s].t[k], d.test[s].t[d.indices[s][k]]);
    }
}

TEST(Spirals, DeterministicUnderSeed) {
  const auto a = gen_spirals(small_spiral(4)), b = gen_spirals(small_spiral(4));
  for (std::size_t s = 0; s < a.train.size(); ++s) {
    EXPECT_EQ(a.train[s].x, b.train[s].x);
    EXPECT_EQ(a.train[s].t, b.train[s].t);
  }
  const auto c = gen_spirals(small_spiral(5));
  EXPECT_NE(a.train[0].x, c.train[0].x);
}

TEST(Spirals, ChiralityIsBalanced) {
  const auto d = gen_spirals(small_spiral(2));
  int ccw = 0, cw = 0;
  for (std::size_t s = 0; s < d.test.size(); ++s) {
    const int c = chirality(d.test[s]);
    EXPECT_EQ(c, d.shapes[s].clockwise ? -1 : 1);
    (c > 0 ? ccw : cw) += 1;
  }
  EXPECT_EQ(ccw, 5);
  EXPECT_EQ(cw, 5);
}

TEST(Spirals, IndicesStrictlyIncreasingAndUnique) {
  const auto d = gen_spirals(small_spiral(3));
  for (const auto& idx : d.indices) {
    for (std::size_t k = 1; k < idx.size(); ++k) EXPECT_LT(idx[k - 1], idx[k]);
    EXPECT_LT(idx.back(), 500u);
  }
}

TEST(Spirals, RadiusFollowsArchimedeanLaw) {
  const auto spec = small_spiral();
  const SpiralShape shape{0.7, true};
  for (double t : {-1.0, 0.0, 5.0, 18.8, 20.0}) {
    const Vector p = spiral_point(spec, shape, t);
    const double phi = spec.phi_min + (spec.phi_max - spec.phi_min) * t / spec.t_max;
    EXPECT_NEAR(std::hypot(p[0], p[1]), std::abs(0.3 * phi), 1e-12);
  }
}

TEST(Spirals, TooManyObservationsRejected) {
  auto spec = small_spiral();
  spec.n_obs = 501;
  EXPECT_THROW((void)gen_spirals(spec), SpecError);
}

TEST(Snapshot, RoundTripKeepsSeedAndHash) {
  const auto d = gen_spirals(small_spiral(6));
  const Snapshot s = spiral_snapshot(d);
  const Snapshot r = deserialize_snapshot(serialize_snapshot(s));
  EXPECT_EQ(r.seed, 6u);
  EXPECT_EQ(r.spec_hash, fnv1a(d.spec.describe()));
  ASSERT_EQ(r.sequences.size(), d.train.size());
  EXPECT_EQ(r.sequences[3].x, d.train[3].x);
  EXPECT_NE(fnv1a(small_spiral(7).describe()), r.spec_hash);
}

// --- CSV --------------------------------------------------------------------

TEST(Csv, ClimateThreeRows) {
  std::istringstream in(
      "date,meantemp,humidity,wind_speed,meanpressure\n"
      "2013-01-01,10.0,84.5,0.0,1015.66\n"
      "2013-01-02,7.4,92.0,2.98,1017.8\n"
      "2013-01-03,7.166,87.0,4.633,1018.666\n");
  const Series s = parse_csv_daily(in, CsvSchema::Climate);
  ASSERT_EQ(s.seq.size(), 3u);
  EXPECT_EQ(s.seq.dim(), 4u);
  EXPECT_EQ(s.seq.t, (std::vector<double>{0, 1, 2}));
  EXPECT_DOUBLE_EQ(s.seq.x[1][2], 2.98);
}

TEST(Csv, StockKeepsWeekendGap) {
  std::istringstream in(
      "Date,Open,High,Low,Close,Volume,Name\n"
      "2006-01-05,10,11,9,10.5,100,AAA\n"
      "2006-01-06,10.5,12,10,11,200,AAA\n"
      "2006-01-09,11,11.5,10.2,11.1,150,AAA\n");
  const Series s = parse_csv_daily(in, CsvSchema::Stock);
  EXPECT_EQ(s.seq.t, (std::vector<double>{0, 1, 4}));
  EXPECT_EQ(s.seq.dim(), 3u);
  EXPECT_EQ(s.features, (std::vector<std::string>{"Open", "High", "Low"}));
}

TEST(Csv, TickerFilter) {
  std::istringstream in(
      "Date,Open,High,Low,Close,Volume,Name\n"
      "2006-01-03,1,2,0.5,1,10,AAA\n"
      "2006-01-03,5,6,4,5,10,BBB\n"
      "2006-01-04,1.1,2,0.6,1,10,AAA\n"
      "2006-01-04,5.5,6,4,5,10,BBB\n");
  const Series s = parse_csv_daily(in, CsvSchema::Stock, {"BBB", std::nullopt});
  ASSERT_EQ(s.seq.size(), 2u);
  EXPECT_EQ(s.seq.x[1][0], 5.5);
}

TEST(Csv, MissingColumnsListed) {
  std::istringstream in("date,meantemp,humidity\n2013-01-01,1,2\n");
  try {
    (void)parse_csv_daily(in, CsvSchema::Climate);
    FAIL();
  } catch (const SchemaError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("wind_speed"), std::string::npos);
    EXPECT_NE(msg.find("found [date, meantemp, humidity]"), std::string::npos);
  }
}

TEST(Csv, BadRowReportsLine) {
  std::istringstream in(
      "date,meantemp,humidity,wind_speed,meanpressure\n"
      "2013-01-01,10,84,0,1015\n"
      "2013-01-02,abc,92,3,1017\n");
  try {
    (void)parse_csv_daily(in, CsvSchema::Climate);
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(Csv, BadDateAndDuplicates) {
  std::istringstream bad_date("date,meantemp,humidity,wind_speed,meanpressure\n2013-02-30,1,2,3,4\n");
  EXPECT_THROW((void)parse_csv_daily(bad_date, CsvSchema::Climate), SchemaError);
  std::istringstream dup(
      "date,meantemp,humidity,wind_speed,meanpressure\n2013-01-01,1,2,3,4\n2013-01-01,1,2,3,4\n");
  EXPECT_THROW((void)parse_csv_daily(dup, CsvSchema::Climate), SchemaError);
}

TEST(Csv, OriginShiftsOffsets) {
  std::istringstream in("date,meantemp,humidity,wind_speed,meanpressure\n2017-01-01,1,2,3,4\n");
  const auto origin = parse_iso_date("2013-01-01");
  const Series s = parse_csv_daily(in, CsvSchema::Climate, {"", origin});
  EXPECT_EQ(s.seq.t[0], 1461.0);
}

TEST(Csv, IsoDates) {
  EXPECT_EQ(parse_iso_date("1970-01-01"), 0L);
  EXPECT_EQ(parse_iso_date("2000-03-01").value() - parse_iso_date("2000-02-28").value(), 2L);
  EXPECT_FALSE(parse_iso_date("2001-13-01"));
  EXPECT_FALSE(parse_iso_date("01/02/2003"));
}

// --- normalization ----------------------------------------------------------

TEST(Normalize, TwoPointFeature) {
  const auto s = compute_stats({Vector{0.0}, Vector{2.0}});
  EXPECT_EQ(s.mean[0], 1.0);
  EXPECT_EQ(s.std[0], 1.0);
  EXPECT_EQ(normalize(Vector{0.0}, s)[0], -1.0);
  EXPECT_EQ(normalize(Vector{2.0}, s)[0], 1.0);
}

TEST(Normalize, ConstantFeatureWarnsAndZeroes) {
  const auto s = compute_stats({Vector{3.0, 1.0}, Vector{3.0, 2.0}}, {"flat", "moving"});
  EXPECT_EQ(s.std[0], 1.0);
  ASSERT_EQ(s.warnings.size(), 1u);
  EXPECT_NE(s.warnings[0].find("flat"), std::string::npos);
  EXPECT_EQ(normalize(Vector{3.0, 1.0}, s)[0], 0.0);
}

TEST(Normalize, RoundTrip) {
  Rng rng(8);
  std::vector<Vector> rows;
  for (int i = 0; i < 50; ++i) rows.push_back(100.0 * gaussian(rng, 3));
  const auto s = compute_stats(rows);
  for (const auto& r : rows) {
    const Vector back = denormalize(normalize(r, s), s);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(back[j], r[j], 1e-12 * std::max(1.0, std::abs(r[j])));
  }
}

TEST(Normalize, StatsIgnoreTestSplit) {
  TimedSequence seq;
  for (int i = 0; i < 20; ++i) seq.push_back(Vector{static_cast<double>(i)}, i);
  auto [train, test] = chronological_split(seq);
  const auto before = compute_stats(train.x);
  for (auto& x : test.x) x[0] = 1e9;
  const auto after = compute_stats(train.x);
  EXPECT_EQ(before.mean, after.mean);
  EXPECT_EQ(before.std, after.std);
}

// --- windows ----------------------------------------------------------------

TimedSequence ramp(std::size_t n) {
  TimedSequence seq;
  for (std::size_t i = 0; i < n; ++i) seq.push_back(Vector{static_cast<double>(i)}, static_cast<double>(i));
  return seq;
}

TEST(Window, IntegerDivision) {
  const auto w = window(ramp(22), {7, 7});
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0].seen.t.back(), 6.0);
  EXPECT_EQ(w[0].future.t.front(), 7.0);
  EXPECT_EQ(window(ramp(1462), {365, 60}).size(), 3u);
  EXPECT_TRUE(window(ramp(10), {7, 7}).empty());
}

TEST(Window, ConsecutiveAndMonotone) {
  const auto w = window(ramp(100), {15, 15});
  ASSERT_EQ(w.size(), 3u);
  for (std::size_t i = 0; i < w.size(); ++i) {
    EXPECT_NO_THROW(w[i].seen.validate());
    EXPECT_NO_THROW(w[i].future.validate());
    EXPECT_EQ(w[i].seen.t.front(), 30.0 * i);
  }
}

TEST(Window, ForecastUsesTrainTail) {
  auto [train, test] = chronological_split(ramp(100));
  const auto w = forecast_windows(train, test, {30, 10});
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[0].seen.t.front(), 45.0);
  EXPECT_EQ(w[0].future.t.front(), 75.0);
  EXPECT_EQ(w[1].seen.t.front(), 55.0);
}

TEST(Split, SeventyFiveTwentyFiveChronological) {
  auto [train, test] = chronological_split(ramp(3019));
  EXPECT_EQ(train.size(), 2264u);
  EXPECT_EQ(test.size(), 755u);
  EXPECT_LT(train.t.back(), test.t.front());
  std::set<double> seen(train.t.begin(), train.t.end());
  for (double t : test.t) EXPECT_EQ(seen.count(t), 0u);
}

}  // namespace
}  // namespace lode
