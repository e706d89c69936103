#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "sigalloc/market.hpp"

using namespace sigalloc;

namespace {

SitConfig small_config(std::size_t assets) {
  SitConfig cfg;
  cfg.assets = assets;
  cfg.slices = 4;
  cfg.horizon = 3;
  cfg.period = 5;
  return cfg;
}

std::vector<double> word_values(const std::vector<double>& flat, std::size_t offset, std::size_t n) {
  return {flat.begin() + static_cast<std::ptrdiff_t>(offset), flat.begin() + static_cast<std::ptrdiff_t>(offset + n)};
}

}  // namespace

TEST(Dates, ParseFormatRoundTrip) {
  EXPECT_EQ(format_date(parse_date("2016-02-29")), "2016-02-29");
  EXPECT_EQ(parse_date("2000-01-03"), make_date(2000, 1, 3));
  for (const char* bad : {"2015-02-29", "2016-13-01", "2016/01/01", "16-01-01", "2016-01-0x"}) {
    try {
      parse_date(bad);
      FAIL() << "expected FormatError for " << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::FormatError);
    }
  }
}

TEST(CalendarFeatures, MondayStartsDayOfWeekCycle) {
  const auto f = calendar_features(make_date(2024, 1, 1));  // a Monday, first of January
  EXPECT_NEAR(f[0], 0.0, 1e-15);
  EXPECT_NEAR(f[1], 1.0, 1e-15);
  EXPECT_NEAR(f[2], 0.0, 1e-15);
  EXPECT_NEAR(f[3], 1.0, 1e-15);
  EXPECT_NEAR(f[4], 0.0, 1e-15);
  EXPECT_NEAR(f[5], 1.0, 1e-15);
  const auto wed = calendar_features(make_date(2024, 1, 3));
  EXPECT_NEAR(wed[0], std::sin(2 * M_PI * 2 / 7), 1e-15);
  const auto dec = calendar_features(make_date(2023, 12, 31));
  EXPECT_NEAR(dec[4], std::sin(2 * M_PI * 11 / 12), 1e-15);
  EXPECT_NEAR(dec[2], std::sin(2 * M_PI * 30 / 31), 1e-15);
}

TEST(CalendarFeatures, DeterministicAndBounded) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const Date d = make_date(1990, 1, 1) + std::chrono::days{static_cast<int>(rng.below(20000))};
    const auto a = calendar_features(d), b = calendar_features(d);
    EXPECT_EQ(a, b);
    for (double x : a) {
      EXPECT_GE(x, -1.0);
      EXPECT_LE(x, 1.0);
    }
  }
}

TEST(ReadCsv, WellFormedFile) {
  std::istringstream in("date,AAA,BBB\n2020-01-02,10,20\n2020-01-03,11,19.5\n2020-01-06,12.25,21\n");
  const auto p = read_csv(in);
  EXPECT_EQ(p.rows(), 3u);
  EXPECT_EQ(p.cols(), 2u);
  EXPECT_EQ(p.assets, (std::vector<std::string>{"AAA", "BBB"}));
  EXPECT_DOUBLE_EQ(p.at(2, 0), 12.25);
  EXPECT_EQ(p.dates[1], make_date(2020, 1, 3));
}

TEST(ReadCsv, ShuffledRowsGiveSortedPanel) {
  std::istringstream sorted("date,A,B\n2020-01-02,1,2\n2020-01-03,3,4\n2020-01-06,5,6\n");
  std::istringstream shuffled("date,A,B\n2020-01-06,5,6\n2020-01-02,1,2\n2020-01-03,3,4\n");
  const auto a = read_csv(sorted), b = read_csv(shuffled);
  EXPECT_EQ(a.dates, b.dates);
  EXPECT_EQ(a.prices, b.prices);
  EXPECT_EQ(a.assets, b.assets);
}

TEST(ReadCsv, RejectedRowsAreNamed) {
  std::istringstream in("date,A,B\n2020-01-02,1,2\n2020-01-03,0,4\n2020-01-06,5,\n2020-01-07,-1,3\n");
  try {
    read_csv(in);
    FAIL() << "expected FormatError";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FormatError);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("line 4"), std::string::npos) << msg;
    EXPECT_NE(msg.find("line 5"), std::string::npos) << msg;
    EXPECT_EQ(msg.find("line 2"), std::string::npos) << msg;
  }
}

TEST(ReadCsv, StructuralErrors) {
  auto code_of = [](const std::string& text, std::size_t min_rows = 0) {
    std::istringstream in(text);
    try {
      read_csv(in, min_rows);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoError;  // sentinel: no error
  };
  EXPECT_EQ(code_of(""), ErrorCode::FormatError);
  EXPECT_EQ(code_of("when,A\n2020-01-02,1\n"), ErrorCode::FormatError);
  EXPECT_EQ(code_of("date,A,A\n2020-01-02,1,2\n"), ErrorCode::FormatError);
  EXPECT_EQ(code_of("date,A\n2020-01-02,1\n2020-01-02,2\n"), ErrorCode::FormatError);
  EXPECT_EQ(code_of("date,A\n2020-01-02,abc\n"), ErrorCode::FormatError);
  EXPECT_EQ(code_of("date,A\n2020-01-02,1\n2020-01-03,2\n", 3), ErrorCode::InsufficientHistory);
  EXPECT_EQ(code_of("date,A\n2020-01-02,1\n2020-01-03,2\n", 2), ErrorCode::IoError);
}

TEST(WriteCsv, RoundTripsExactly) {
  SynthSpec spec;
  spec.assets = 3;
  spec.rows = 50;
  spec.seed = 4;
  const auto p = synth_market(spec);
  std::stringstream ss;
  write_csv(ss, p);
  const auto q = read_csv(ss);
  EXPECT_EQ(p.dates, q.dates);
  EXPECT_EQ(p.assets, q.assets);
  EXPECT_EQ(p.prices, q.prices);
}

TEST(Scenarios, ConstantPricesGiveZeroPriceChannelAndReturns) {
  const auto cfg = small_config(2);
  PricePanel p;
  p.assets = {"A", "B"};
  for (std::size_t t = 0; t < min_panel_rows(cfg); ++t) {
    p.dates.push_back(make_date(2020, 1, 1) + std::chrono::days{static_cast<int>(t)});
    p.prices.push_back(50.0);
    p.prices.push_back(7.0);
  }
  const auto s = build_scenarios(p, cfg, 1);
  ASSERT_EQ(s.size(), 1u);
  for (double r : s[0].returns) EXPECT_EQ(r, 0.0);
  for (double c : s[0].features.cross_sigs) EXPECT_EQ(c, 0.0);
  // Slice paths are (time, price); every word containing the price letter vanishes.
  const std::size_t ds = cfg.slice_sig_dim();
  for (std::size_t block = 0; block < cfg.slices * cfg.assets; ++block) {
    TruncatedSignature sig(2, cfg.slice_level, word_values(s[0].features.slice_sigs, block * ds, ds));
    EXPECT_EQ(sig.word({1}), 0.0);
    EXPECT_EQ(sig.word({0, 1}), 0.0);
    EXPECT_EQ(sig.word({1, 0, 0}), 0.0);
    EXPECT_NEAR(sig.word({0}), 1.0, 1e-15);
  }
}

TEST(Scenarios, ReturnsAreSimpleReturnsAfterDecision) {
  const auto cfg = small_config(2);
  SynthSpec spec;
  spec.assets = 2;
  spec.rows = 200;
  spec.seed = 5;
  const auto p = synth_market(spec);
  const auto s = build_scenario(p, cfg, 60);
  for (std::size_t k = 0; k < cfg.horizon; ++k)
    for (std::size_t j = 0; j < 2; ++j)
      EXPECT_DOUBLE_EQ(s.returns[k * 2 + j], p.at(60 + (k + 1) * 5, j) / p.at(60 + k * 5, j) - 1.0);
  EXPECT_EQ(s.decision_date, p.dates[60]);
  EXPECT_EQ(s.last_return_date, p.dates[60 + cfg.horizon * cfg.period]);
}

TEST(Scenarios, FeaturesUseNoDataAfterDecisionRow) {
  const auto cfg = small_config(3);
  SynthSpec spec;
  spec.assets = 3;
  spec.rows = 300;
  spec.leadlag_pairs = {{0, 1}};
  spec.seed = 6;
  const auto p = synth_market(spec);
  for (std::size_t row : {20ul, 57ul, 140ul, 250ul}) {
    const auto full = build_features(p, cfg, row);
    const auto cut = build_features(p.head(row + 1), cfg, row);
    EXPECT_EQ(full.slice_sigs, cut.slice_sigs);
    EXPECT_EQ(full.cross_sigs, cut.cross_sigs);
    EXPECT_EQ(full.calendar, cut.calendar);
  }
}

TEST(Scenarios, FeaturesAreInvariantToPriceScale) {
  const auto cfg = small_config(2);
  SynthSpec spec;
  spec.assets = 2;
  spec.rows = 100;
  spec.seed = 7;
  const auto p = synth_market(spec);
  auto q = p;
  for (double& x : q.prices) x *= 3.0;
  const auto a = build_features(p, cfg, 40), b = build_features(q, cfg, 40);
  for (std::size_t i = 0; i < a.slice_sigs.size(); ++i) EXPECT_NEAR(a.slice_sigs[i], b.slice_sigs[i], 1e-12);
  for (std::size_t i = 0; i < a.cross_sigs.size(); ++i) EXPECT_NEAR(a.cross_sigs[i], b.cross_sigs[i], 1e-12);
}

TEST(Scenarios, StrideKGivesNonOverlappingDecisions) {
  for (std::size_t rows : {75ul, 100ul, 333ul, 1000ul}) {
    const auto cfg = small_config(2);
    SynthSpec spec;
    spec.assets = 2;
    spec.rows = rows;
    const auto p = synth_market(spec);
    const auto s = build_scenarios(p, cfg, cfg.horizon);
    EXPECT_EQ(s.size(), (rows - cfg.window_rows()) / (cfg.horizon * cfg.period)) << rows;
    for (std::size_t i = 1; i < s.size(); ++i) EXPECT_EQ(s[i].decision_row, s[i - 1].decision_row + cfg.horizon * cfg.period);
    const auto dense = build_scenarios(p, cfg, 1);
    EXPECT_EQ(dense.size(), (rows - cfg.window_rows()) / cfg.period - cfg.horizon + 1) << rows;
  }
}

TEST(Scenarios, ShortPanelIsInsufficientHistory) {
  const auto cfg = small_config(2);
  SynthSpec spec;
  spec.assets = 2;
  spec.rows = min_panel_rows(cfg) - 1;
  try {
    build_scenarios(synth_market(spec), cfg, 1);
    FAIL() << "expected InsufficientHistory";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientHistory);
  }
}

TEST(Splits, PartitionsShareNoReturnDates) {
  const auto cfg = small_config(2);
  SynthSpec spec;
  spec.assets = 2;
  spec.rows = 600;
  const auto p = synth_market(spec);
  const auto dates = split_dates_by_fraction(p, 0.6, 0.2);
  const auto split = split_scenarios(build_scenarios(p, cfg, 1), dates);
  ASSERT_FALSE(split.train.empty());
  ASSERT_FALSE(split.val.empty());
  ASSERT_FALSE(split.test.empty());
  for (const auto& s : split.train) EXPECT_LE(s.last_return_date, dates.train_end);
  for (const auto& s : split.val) {
    EXPECT_GE(s.decision_date, dates.train_end);
    EXPECT_LE(s.last_return_date, dates.val_end);
  }
  for (const auto& s : split.test) EXPECT_GE(s.decision_date, dates.val_end);
  EXPECT_LE(split.train.back().last_return_date, split.val.front().decision_date);
  EXPECT_LE(split.val.back().last_return_date, split.test.front().decision_date);
}

TEST(Splits, DefaultBoundaries) {
  const SplitDates d;
  EXPECT_EQ(d.train_end, make_date(2016, 12, 31));
  EXPECT_EQ(d.val_end, make_date(2019, 12, 31));
  EXPECT_EQ(d.test_end, make_date(2024, 12, 27));
}

TEST(SynthMarket, NoiselessLagOneShiftsLeaderReturns) {
  SynthSpec spec;
  spec.assets = 4;
  spec.rows = 300;
  spec.leadlag_pairs = {{0, 2}, {3, 1}};
  spec.lag = 1;
  spec.seed = 8;
  const auto p = synth_market(spec);
  for (std::size_t t = 2; t < p.rows(); ++t) {
    EXPECT_NEAR(std::log(p.at(t, 2) / p.at(t - 1, 2)), std::log(p.at(t - 1, 0) / p.at(t - 2, 0)), 1e-12);
    EXPECT_NEAR(std::log(p.at(t, 1) / p.at(t - 1, 1)), std::log(p.at(t - 1, 3) / p.at(t - 2, 3)), 1e-12);
  }
  for (std::size_t t = 0; t < p.rows(); ++t) {
    const auto wd = std::chrono::weekday{p.dates[t]}.c_encoding();
    EXPECT_TRUE(wd >= 1 && wd <= 5);
  }
}

TEST(SynthMarket, DeterministicPerSeed) {
  SynthSpec spec;
  spec.assets = 3;
  spec.rows = 100;
  spec.seed = 9;
  const auto a = synth_market(spec), b = synth_market(spec);
  EXPECT_EQ(a.prices, b.prices);
  spec.seed = 10;
  EXPECT_NE(a.prices, synth_market(spec).prices);
}

TEST(SynthMarket, RejectsOverlappingPairs) {
  SynthSpec spec;
  spec.assets = 4;
  spec.leadlag_pairs = {{0, 1}, {1, 2}};
  try {
    synth_market(spec);
    FAIL() << "expected InvalidConfig";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidConfig);
  }
  spec.leadlag_pairs = {{2, 2}};
  EXPECT_THROW(synth_market(spec), Error);
}

TEST(SynthMarket, PlantedPairHasPositiveSignedArea) {
  SynthSpec spec;
  spec.assets = 4;
  spec.rows = 200 * 250;
  spec.leadlag_pairs = {{0, 1}};
  spec.lag = 1;
  spec.noise_sigma = 0.002;
  spec.seed = 11;
  const auto p = synth_market(spec);
  std::size_t positive = 0;
  std::vector<double> unpaired;
  for (std::size_t w = 0; w < 200; ++w) {
    const std::size_t first = w * 250;
    if (signed_area(log_price_path(p, 0, first, 250), log_price_path(p, 1, first, 250)) > 0.0) ++positive;
    unpaired.push_back(signed_area(log_price_path(p, 2, first, 250), log_price_path(p, 3, first, 250)));
  }
  EXPECT_GE(positive, 190u);
  double mean = 0.0, var = 0.0;
  for (double a : unpaired) mean += a;
  mean /= 200.0;
  for (double a : unpaired) var += (a - mean) * (a - mean);
  const double stderr_ = std::sqrt(var / 199.0 / 200.0);
  EXPECT_LT(std::abs(mean), 2.0 * stderr_);
}
