#include <gtest/gtest.h>

#include <set>

#include "crits/data.hpp"
#include "crits/eval.hpp"
#include "support.hpp"

using namespace crits;
using namespace crits::testing;

namespace {

SaliencyMap one_hot(std::size_t m, std::size_t T, std::size_t c, std::size_t t) {
  SaliencyMap r(m, T);
  r(c, t) = 1.0;
  return r;
}

CritsModel constant_model(double bias) {
  CritsModel m = init_model(ModelConfig{3, 2, {4}, 1, 12, 0});
  for (auto t : m.params.tensors()) std::fill(t.begin(), t.end(), 0.0);
  m.params.out_bias = bias;
  return m;
}

TimeSeriesDataset random_dataset(std::mt19937_64& rng, std::size_t n, std::size_t m, std::size_t T) {
  TimeSeriesDataset ds;
  ds.name = "rand";
  ds.channels = m;
  ds.length = T;
  ds.class_names = {"0", "1"};
  for (std::size_t i = 0; i < n; ++i) {
    ds.instances.push_back(random_series(rng, m, T));
    ds.labels.push_back(static_cast<int>(i % 2));
  }
  return ds;
}

}  // namespace

TEST(Perturb, ZeroSingleCell) {
  std::mt19937_64 rng(1);
  Series x = random_series(rng, 1, 10);
  x(0, 5) = 2.3;
  // q = 0.1 of 10 cells selects exactly one.
  const Series out = perturb(x, one_hot(1, 10, 0, 5), {PerturbKind::Zero, 0.1, 2});
  for (std::size_t t = 0; t < 10; ++t) EXPECT_EQ(out(0, t), t == 5 ? 0.0 : x(0, t));
}

TEST(Perturb, InverseUsesChannelMax) {
  const Series x(2, 4, {1.0, 4.0, 2.0, 0.0, 9.0, 1.0, 1.0, 1.0});
  const Series out = perturb(x, one_hot(2, 4, 0, 0), {PerturbKind::Inverse, 0.125, 2});
  EXPECT_EQ(out(0, 0), 3.0);
  for (std::size_t i = 1; i < x.size(); ++i) EXPECT_EQ(out.values()[i], x.values()[i]);
}

TEST(Perturb, SwapAndMeanWindows) {
  const Series x(1, 8, {0.0, 1.0, 2.0, 3.0, 4.0, 9.0, 9.0, 9.0});
  // Window 4 centred on t = 3 covers [1, 4].
  const Series s = perturb(x, one_hot(1, 8, 0, 3), {PerturbKind::Swap, 0.125, 4});
  EXPECT_EQ(vals(s), (std::vector<double>{0.0, 4.0, 3.0, 2.0, 1.0, 9.0, 9.0, 9.0}));
  const Series mx(1, 8, {0.0, 1.0, 2.0, 3.0, 4.0, 9.0, 9.0, 9.0});
  const Series m = perturb(mx, one_hot(1, 8, 0, 3), {PerturbKind::Mean, 0.125, 4});
  EXPECT_EQ(vals(m), (std::vector<double>{0.0, 2.5, 2.5, 2.5, 2.5, 9.0, 9.0, 9.0}));
}

TEST(Perturb, WindowsClipAndMerge) {
  const Series x(1, 6, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
  SaliencyMap r(1, 6);
  r(0, 0) = 5.0;  // window [-1, 0] clipped to [0, 0]
  r(0, 1) = 4.0;  // window [0, 1] merges with it
  const Series s = perturb(x, r, {PerturbKind::Swap, 2.0 / 6.0, 2});
  EXPECT_EQ(vals(s), (std::vector<double>{2.0, 1.0, 3.0, 4.0, 5.0, 6.0}));
}

TEST(Perturb, TiesByChannelMajorIndex) {
  const std::vector<std::size_t> cells = select_cells(SaliencyMap(2, 5, 1.0), 0.3);
  EXPECT_EQ(cells, (std::vector<std::size_t>{0, 1, 2}));
  SaliencyMap r(2, 5, 1.0);
  r(1, 2) = -3.0;
  EXPECT_EQ(select_cells(r, 0.1), (std::vector<std::size_t>{7}));
}

TEST(Perturb, UnselectedUntouchedAndProperties) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    const std::size_t m = 1 + rng() % 3, T = 8 + rng() % 30;
    const Series x = random_series(rng, m, T);
    const SaliencyMap r = random_series(rng, m, T);
    const double q = 0.05 + 0.3 * static_cast<double>(rng() % 100) / 100.0;
    const std::size_t w = 2 + rng() % 6;
    const auto cells = select_cells(r, q);
    const std::set<std::size_t> chosen(cells.begin(), cells.end());
    for (PerturbKind k : {PerturbKind::Zero, PerturbKind::Inverse}) {
      const Series out = perturb(x, r, {k, q, w});
      for (std::size_t j = 0; j < x.size(); ++j) {
        if (!chosen.count(j)) {
          EXPECT_EQ(out.values()[j], x.values()[j]);
        }
      }
    }
    // Cells far from every selected time step keep their values.
    std::vector<std::vector<bool>> covered(m, std::vector<bool>(T, false));
    for (std::size_t j : cells) {
      const auto t = static_cast<long>(j % T);
      for (long u = t - static_cast<long>(w / 2); u < t - static_cast<long>(w / 2) + static_cast<long>(w); ++u) {
        if (u >= 0 && u < static_cast<long>(T)) covered[j / T][static_cast<std::size_t>(u)] = true;
      }
    }
    const Series sw = perturb(x, r, {PerturbKind::Swap, q, w});
    const Series mn = perturb(x, r, {PerturbKind::Mean, q, w});
    double sum_x = 0.0, sum_m = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      for (std::size_t t = 0; t < T; ++t) {
        if (!covered[c][t]) {
          EXPECT_EQ(sw(c, t), x(c, t));
          EXPECT_EQ(mn(c, t), x(c, t));
        }
      }
    }
    for (std::size_t j = 0; j < x.size(); ++j) {
      sum_x += x.values()[j];
      sum_m += mn.values()[j];
    }
    EXPECT_NEAR(sum_m, sum_x, 1e-9);
    // Swap is an involution when the selection is unchanged (relevance fixed).
    EXPECT_EQ(perturb(sw, r, {PerturbKind::Swap, q, w}), x);
  }
}

TEST(Perturb, Errors) {
  const Series x(1, 6, 1.0);
  EXPECT_THROW(perturb(x, SaliencyMap(1, 5), {PerturbKind::Zero, 0.1, 2}), Error);
  EXPECT_THROW(perturb(x, SaliencyMap(1, 6), {PerturbKind::Zero, 0.0, 2}), Error);
  EXPECT_THROW(perturb(x, SaliencyMap(1, 6), {PerturbKind::Swap, 0.1, 1}), Error);
}

TEST(Metrics, RmsExample) {
  const std::vector<double> shifts{0.3, 0.4};
  EXPECT_NEAR(rms(shifts), 0.3535533905932738, 1e-15);
  EXPECT_EQ(rmse(Series(1, 3, 1.0), Series(1, 3, 1.0)), 0.0);
  EXPECT_NEAR(rmse(Series(1, 2, {0.0, 0.0}), Series(1, 2, {3.0, 4.0})), std::sqrt(12.5), 1e-15);
}

TEST(Metrics, AlignmentFromExplainerShifts) {
  // Top cell is t = 2 (relevance 6); swapping window [1, 2] gives x = [0, 3, 1, 2],
  // F = [-3, 2, -1], pooled 2, z = 4.5.
  const CritsModel m = hand_net();
  const Series xs[] = {hand_input()};
  const double a = alignment(m, intrinsic_explainer(), xs, {PerturbKind::Swap, 0.25, 2});
  EXPECT_NEAR(a, sigmoid(4.5) - sigmoid(2.5), 1e-15);
}

TEST(Metrics, ConstantModelHasZeroAlignment) {
  std::mt19937_64 rng(3);
  const CritsModel m = constant_model(0.3);
  std::vector<Series> xs;
  for (int i = 0; i < 10; ++i) xs.push_back(random_series(rng, 1, 12));
  for (PerturbKind k : kAllPerturbations) {
    for (const Explainer& e : {intrinsic_explainer(), gradient_explainer(), uniform_explainer()}) {
      EXPECT_EQ(alignment(m, e, xs, {k, 0.2, 3}), 0.0);
    }
  }
}

TEST(Metrics, InputSensitivity) {
  std::mt19937_64 rng(4);
  const CritsModel model = random_model(rng, 2, 16, 4, 4, {6});
  const Series x = random_series(rng, 2, 16);
  EXPECT_EQ(input_sensitivity(model, intrinsic_explainer(), x, 0.0, 1), 0.0);
  EXPECT_EQ(input_sensitivity(model, gradient_explainer(), x, 0.0, 1), 0.0);
  EXPECT_EQ(input_sensitivity(model, smoothgrad_explainer(0.2, 8), x, 0.0, 1), 0.0);
  // Tiny noise keeps the trace, so the weight map is unchanged.
  const double tiny = 1e-12;
  const Series noisy = detail::add_noise(x, tiny, derive_seed(9, {0}));
  ASSERT_TRUE(forward(model, noisy).same_region(forward(model, x)));
  EXPECT_EQ(input_sensitivity(model, intrinsic_explainer(), x, tiny, 9), 0.0);
  EXPECT_EQ(input_sensitivity(model, smoothgrad_explainer(0.5, 4), x, 0.3, 2),
            input_sensitivity(model, smoothgrad_explainer(0.5, 4), x, 0.3, 2));
  EXPECT_THROW(input_sensitivity(model, intrinsic_explainer(), x, -1.0, 1), Error);
}

TEST(Metrics, SparsityExamples) {
  EXPECT_EQ(sparsity(SaliencyMap(1, 10)), 0.0);
  EXPECT_EQ(sparsity(SaliencyMap(2, 5, 1.0)), 1.0);
  SaliencyMap s(1, 10);
  s(0, 0) = 0.5;
  s(0, 1) = -0.02;
  s(0, 2) = 0.009;
  s(0, 3) = 0.01;
  EXPECT_DOUBLE_EQ(sparsity(s), 0.2);
}

TEST(Metrics, IntrinsicSparsityBound) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    const std::size_t T = 16 + rng() % 40, h = 2 + rng() % 6, K = 1 + rng() % 4;
    const CritsModel model = random_model(rng, 1 + rng() % 2, T, h, K, {5});
    const Series x = random_series(rng, model.config.channels, T);
    const double bound = std::min(1.0, static_cast<double>(K * h) / static_cast<double>(T));
    EXPECT_LE(sparsity(explain_intrinsic(model, x).weights), bound + 1e-12);
  }
}

TEST(Protocol, ShapeAndDeterminism) {
  std::mt19937_64 rng(6);
  const CritsModel model = random_model(rng, 1, 20, 4, 3, {5});
  const TimeSeriesDataset test = random_dataset(rng, 30, 1, 20);
  ProtocolConfig cfg;
  cfg.dataset = "rand";
  cfg.samples = 12;
  const std::vector<Explainer> ex{intrinsic_explainer(), smoothgrad_explainer(0.1, 4)};
  const EvalReport a = run_protocol(model, ex, test, 42, cfg);
  cfg.threads = 3;
  const EvalReport b = run_protocol(model, ex, test, 42, cfg);
  EXPECT_EQ(report_to_csv(a), report_to_csv(b));
  for (const std::string name : {"intrinsic", "smoothgrad"}) {
    std::size_t align = 0, is = 0, sp = 0;
    for (const EvalRecord& r : a.records) {
      if (r.explainer != name) continue;
      align += r.metric == "alignment";
      is += r.metric == "input_sensitivity";
      sp += r.metric == "sparsity";
      EXPECT_GE(r.value, 0.0);
      EXPECT_GE(r.repetition, 1u);
      EXPECT_LE(r.repetition, 5u);
    }
    EXPECT_EQ(align, 5u * 4u);
    EXPECT_EQ(is, 5u * 5u);
    EXPECT_EQ(sp, 5u * 12u);
  }
  EXPECT_EQ(a.values("intrinsic", "alignment", "zero").size(), 5u);
  EXPECT_EQ(a.samples_per_repetition, 12u);
  EXPECT_EQ(a.window, 4u);
  EXPECT_NE(report_to_csv(a), report_to_csv(run_protocol(model, ex, test, 43, cfg)));
}

TEST(Protocol, RegistrationOrderAndExplainerSet) {
  std::mt19937_64 rng(7);
  const CritsModel model = random_model(rng, 1, 16, 3, 2, {4});
  const TimeSeriesDataset test = random_dataset(rng, 20, 1, 16);
  ProtocolConfig cfg;
  cfg.samples = 8;
  cfg.repetitions = 2;
  const EvalReport ab = run_protocol(model, {intrinsic_explainer(), uniform_explainer()}, test, 1, cfg);
  const EvalReport ba = run_protocol(model, {uniform_explainer(), intrinsic_explainer()}, test, 1, cfg);
  EXPECT_EQ(ab.records, ba.records);
  const EvalReport only = run_protocol(model, {intrinsic_explainer()}, test, 1, cfg);
  std::set<std::string> names;
  for (const EvalRecord& r : only.records) names.insert(r.explainer);
  EXPECT_EQ(names, std::set<std::string>{"intrinsic"});
  EXPECT_THROW(run_protocol(model, {}, test, 1, cfg), Error);
}

TEST(Protocol, SmallTestSetUsesAll) {
  std::mt19937_64 rng(8);
  const CritsModel model = random_model(rng, 1, 16, 3, 2, {4});
  const TimeSeriesDataset test = random_dataset(rng, 6, 1, 16);
  const EvalReport r = run_protocol(model, {intrinsic_explainer()}, test, 1);
  EXPECT_EQ(r.samples_per_repetition, 6u);
  EXPECT_NE(report_to_csv(r).find("samples=6"), std::string::npos);
}

TEST(Protocol, CsvRoundTrip) {
  std::mt19937_64 rng(9);
  const CritsModel model = random_model(rng, 1, 16, 3, 2, {4});
  const TimeSeriesDataset test = random_dataset(rng, 10, 1, 16);
  ProtocolConfig cfg;
  cfg.repetitions = 2;
  const EvalReport r = run_protocol(model, {intrinsic_explainer(), gradient_explainer()}, test, 3, cfg);
  const std::string csv = report_to_csv(r);
  EXPECT_EQ(csv.rfind("# ", 0), 0u);
  EXPECT_EQ(report_records_from_csv(csv), r.records);
  EXPECT_THROW(report_records_from_csv("a,b\n1,2\n"), Error);
}
