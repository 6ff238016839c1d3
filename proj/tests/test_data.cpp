#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "crits/data.hpp"

using namespace crits;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected crits::Error";
  return Errc::BadParams;
}

const char* kMinimalTs =
    "# comment line\n"
    "@problemName Tiny\n"
    "@timeStamps false\n"
    "@univariate true\n"
    "@classLabel true a b\n"
    "@data\n"
    "1.5,2,3,4:a\n"
    "-1,0,1e-3,2:b\n";

}  // namespace

TEST(ParseTs, MinimalFile) {
  const TimeSeriesDataset ds = parse_ts(kMinimalTs);
  EXPECT_EQ(ds.name, "Tiny");
  EXPECT_EQ(ds.channels, 1u);
  EXPECT_EQ(ds.length, 4u);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.labels, (std::vector<int>{0, 1}));
  EXPECT_DOUBLE_EQ(ds.instances[0](0, 0), 1.5);
  EXPECT_DOUBLE_EQ(ds.instances[1](0, 2), 1e-3);
}

TEST(ParseTs, TwoDimensionLine) {
  const TimeSeriesDataset ds = parse_ts("@univariate false\n@classLabel true a b\n@data\n1,2,3:4,5,6:a\n");
  EXPECT_EQ(ds.channels, 2u);
  EXPECT_EQ(ds.length, 3u);
  const Series& x = ds.instances[0];
  EXPECT_EQ(std::vector<double>(x.channel(0).begin(), x.channel(0).end()), (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(std::vector<double>(x.channel(1).begin(), x.channel(1).end()), (std::vector<double>{4, 5, 6}));
  EXPECT_EQ(ds.labels[0], 0);
}

TEST(ParseTs, LabelsMapInSortedOrder) {
  const TimeSeriesDataset ds = parse_ts("@classLabel true 2 1\n@data\n1,2:2\n3,4:1\n5,6:2\n");
  EXPECT_EQ(ds.labels, (std::vector<int>{1, 0, 1}));
  EXPECT_EQ(ds.class_names, (std::vector<std::string>{"1", "2"}));
}

TEST(ParseTs, Errors) {
  EXPECT_EQ(code_of([] { parse_ts("@classLabel true a b\n@data\n1,2,3,4:a\n1,2,3,4,5:b\n"); }), Errc::RaggedSeries);
  EXPECT_EQ(code_of([] { parse_ts("@classLabel true a b\n@data\n1,2,3:4,5:a\n"); }), Errc::RaggedSeries);
  EXPECT_EQ(code_of([] { parse_ts("@classLabel true a b\n1,2:a\n"); }), Errc::MalformedHeader);
  EXPECT_EQ(code_of([] { parse_ts("@univariate true\n@data\n1,2:a\n"); }), Errc::MalformedHeader);
  EXPECT_EQ(code_of([] { parse_ts("@classLabel true a b c\n@data\n1,2:a\n1,2:b\n1,2:c\n"); }), Errc::NonBinaryLabels);
  EXPECT_EQ(code_of([] { parse_ts("@classLabel true a b\n@seriesLength 3\n@data\n1,2:a\n"); }), Errc::RaggedSeries);
}

TEST(ParseTs, NumericErrorNamesLineAndColumn) {
  try {
    parse_ts("@classLabel true a b\n@data\n1,2:a\n1,x2:b\n");
    FAIL() << "expected NumericParse";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NumericParse);
    EXPECT_NE(std::string(e.what()).find("line 4 column 3"), std::string::npos) << e.what();
  }
}

TEST(ParseCsv, Examples) {
  const TimeSeriesDataset a = parse_csv("0,0,0,0,1\n", {1, 4});
  EXPECT_EQ(a.labels, (std::vector<int>{1}));
  for (double v : a.instances[0].values()) EXPECT_EQ(v, 0.0);

  const TimeSeriesDataset b = parse_csv("1,2,3,4,5,6,0\n", {2, 3});
  EXPECT_EQ(b.instances[0], Series(2, 3, {1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(b.labels[0], 0);

  EXPECT_EQ(code_of([] { parse_csv("1,2,3,4,5,6\n", {2, 3}); }), Errc::ShapeMismatch);
  EXPECT_EQ(code_of([] { parse_csv("1,2,3,4,5,6,2\n", {2, 3}); }), Errc::NonBinaryLabels);
  EXPECT_EQ(code_of([] { parse_csv("1,2,abc,4,5,6,1\n", {2, 3}); }), Errc::NumericParse);
}

TEST(ParseCsv, HeaderCommentSetsLayout) {
  const TimeSeriesDataset ds = parse_csv("# m=2 T=2\n1,2,3,4,1\n5,6,7,8,0\n");
  EXPECT_EQ(ds.channels, 2u);
  EXPECT_EQ(ds.length, 2u);
  EXPECT_EQ(ds.size(), 2u);
}

TEST(ParseCsv, RoundTripFromTs) {
  const TimeSeriesDataset ts =
      parse_ts("@classLabel true x y\n@data\n0.1,0.2,0.30000000000000004:1e-300,-7,3:x\n9,8,7:6,5,4:y\n");
  const TimeSeriesDataset back = parse_csv(to_csv(ts));
  EXPECT_EQ(back.instances, ts.instances);
  EXPECT_EQ(back.labels, ts.labels);
}

TEST(Norm, FitExamples) {
  TimeSeriesDataset sym{"s", 1, 2, {Series(1, 2, {-1, 1}), Series(1, 2, {1, -1})}, {0, 1}};
  NormStats s = fit_norm(sym);
  EXPECT_DOUBLE_EQ(s.mean[0], 0.0);
  EXPECT_DOUBLE_EQ(s.stddev[0], 1.0);

  TimeSeriesDataset flat{"f", 1, 3, {Series(1, 3, 5.0)}, {0}};
  s = fit_norm(flat);
  EXPECT_DOUBLE_EQ(s.mean[0], 5.0);
  EXPECT_DOUBLE_EQ(s.stddev[0], 1.0);

  TimeSeriesDataset three{"t", 1, 3, {Series(1, 3, {0, 2, 4})}, {0}};
  s = fit_norm(three);
  EXPECT_DOUBLE_EQ(s.mean[0], 2.0);
  EXPECT_NEAR(s.stddev[0], 1.632993161855452, 1e-12);
}

TEST(Norm, ApplyExamples) {
  const Series x(1, 3, {4, -10, 30});
  EXPECT_EQ(apply_norm(NormStats{{0}, {1}}, x), x);
  const Series y = apply_norm(NormStats{{2}, {2}}, x);
  EXPECT_DOUBLE_EQ(y(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(y(0, 2), 14.0);  // no clipping
  EXPECT_EQ(code_of([&] { apply_norm(NormStats{{0, 0}, {1, 1}}, x); }), Errc::ChannelMismatch);
}

TEST(Norm, TrainSplitIsStandardized) {
  const SynthData sd = synth_bump(40, 3, 32, 4, 2.0, 7);
  TimeSeriesDataset ds = sd.dataset;
  for (Series& s : ds.instances) for (double& v : s.channel(1)) v = 3.0 * v + 10.0;
  for (Series& s : ds.instances) for (double& v : s.channel(2)) v = -4.0;  // degenerate
  const TimeSeriesDataset z = apply_norm(fit_norm(ds), ds);
  for (std::size_t c = 0; c < 2; ++c) {
    double sum = 0, sq = 0, n = 0;
    for (const Series& s : z.instances) {
      for (double v : s.channel(c)) {
        sum += v;
        sq += v * v;
        ++n;
      }
    }
    EXPECT_LE(std::abs(sum / n), 1e-9);
    EXPECT_NEAR(std::sqrt(sq / n - (sum / n) * (sum / n)), 1.0, 1e-9);
  }
  for (const Series& s : z.instances) for (double v : s.channel(2)) EXPECT_EQ(v, 0.0);
}

TEST(Split, ProportionsAndDeterminism) {
  TimeSeriesDataset ds{"d", 1, 2, {}, {}};
  for (int i = 0; i < 10; ++i) {
    ds.instances.emplace_back(1, 2, static_cast<double>(i));
    ds.labels.push_back(i % 2);
  }
  const Split a = stratified_split(ds, 0.2, 11);
  ASSERT_EQ(a.test.size(), 2u);
  EXPECT_EQ(a.test.labels[0] + a.test.labels[1], 1);
  const Split b = stratified_split(ds, 0.2, 11);
  EXPECT_EQ(a.test_indices, b.test_indices);
  EXPECT_EQ(a.train_indices, b.train_indices);
}

TEST(Split, IsPartition) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    TimeSeriesDataset ds{"d", 1, 2, {}, {}};
    const std::size_t n = 7 + seed * 3;
    for (std::size_t i = 0; i < n; ++i) {
      ds.instances.emplace_back(1, 2, static_cast<double>(i));
      ds.labels.push_back(i % 3 == 0 ? 1 : 0);
    }
    const Split s = stratified_split(ds, 0.3, seed);
    std::vector<int> seen(n, 0);
    for (std::size_t i : s.train_indices) ++seen[i];
    for (std::size_t i : s.test_indices) ++seen[i];
    for (int v : seen) EXPECT_EQ(v, 1);
    // Per-class proportion within one instance.
    for (int cls : {0, 1}) {
      double total = 0, test = 0;
      for (std::size_t i = 0; i < n; ++i) total += ds.labels[i] == cls;
      for (std::size_t i : s.test_indices) test += ds.labels[i] == cls;
      EXPECT_LE(std::abs(test - 0.3 * total), 1.0);
    }
  }
}

TEST(Split, GunPointSizedDataset) {
  // 451 instances as in the GunPoint male/female archive; class balance does not
  // move the rounded test size outside {90, 91}.
  for (std::size_t positives : {214u, 225u, 237u}) {
    TimeSeriesDataset ds{"gp", 1, 2, {}, {}};
    for (std::size_t i = 0; i < 451; ++i) {
      ds.instances.emplace_back(1, 2, 0.0);
      ds.labels.push_back(i < positives ? 1 : 0);
    }
    const std::size_t n_test = stratified_split(ds, 0.2, 3).test.size();
    EXPECT_TRUE(n_test == 90 || n_test == 91) << n_test;
  }
}

TEST(Split, ClassTooSmall) {
  TimeSeriesDataset ds{"d", 1, 2, {Series(1, 2), Series(1, 2), Series(1, 2)}, {0, 0, 1}};
  EXPECT_EQ(code_of([&] { stratified_split(ds, 0.2, 0); }), Errc::ClassTooSmall);
  EXPECT_EQ(code_of([&] { stratified_split(ds, 1.0, 0); }), Errc::BadParams);
}

TEST(Synth, MasksAndBalance) {
  const SynthData sd = synth_bump(4, 1, 20, 5, 3.0, 1);
  std::size_t with_window = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& m = sd.mask.cells[i];
    const std::size_t ones = static_cast<std::size_t>(std::count(m.begin(), m.end(), 1));
    if (sd.dataset.labels[i] == 1) {
      EXPECT_EQ(ones, 5u);
      const auto first = std::find(m.begin(), m.end(), 1);
      EXPECT_TRUE(std::all_of(first, first + 5, [](auto v) { return v == 1; }));  // contiguous
      ++with_window;
    } else {
      EXPECT_EQ(ones, 0u);
    }
  }
  EXPECT_EQ(with_window, 2u);
}

TEST(Synth, Deterministic) {
  const SynthData a = synth_bump(20, 2, 30, 6, 2.5, 99);
  const SynthData b = synth_bump(20, 2, 30, 6, 2.5, 99);
  EXPECT_EQ(to_csv(a.dataset), to_csv(b.dataset));
  EXPECT_EQ(a.mask.cells, b.mask.cells);
  EXPECT_NE(to_csv(a.dataset), to_csv(synth_bump(20, 2, 30, 6, 2.5, 100).dataset));
}

TEST(Synth, BadShape) {
  EXPECT_EQ(code_of([] { synth_bump(5, 1, 20, 5, 1.0, 0); }), Errc::BadShape);
  EXPECT_EQ(code_of([] { synth_bump(4, 1, 20, 11, 1.0, 0); }), Errc::BadShape);
  EXPECT_EQ(code_of([] { synth_bump(4, 1, 20, 1, 1.0, 0); }), Errc::BadShape);
}
