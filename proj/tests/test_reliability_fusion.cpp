#include <gtest/gtest.h>

#include <random>

#include "avcount/errors.hpp"
#include "avcount/metrics.hpp"
#include "avcount/reliability_fusion.hpp"
#include "test_support.hpp"

using namespace avcount;

namespace {

CountPrediction sight(double v) { return CountPrediction(v, Modality::sight); }
CountPrediction sound(double v) { return CountPrediction(v, Modality::sound); }

std::vector<CountLabel> labels_of(std::initializer_list<double> v) {
  std::vector<CountLabel> out;
  for (double x : v) out.emplace_back(x);
  return out;
}

EpochPredictions epoch(double val, std::map<std::string, double> preds) { return {val, std::move(preds)}; }

}  // namespace

TEST(Fuse, Examples) {
  EXPECT_EQ(fuse(sight(4), sound(6), 0.0).value(), 4.0);
  EXPECT_EQ(fuse(sight(4), sound(6), 1.0).value(), 6.0);
  EXPECT_DOUBLE_EQ(fuse(sight(4), sound(6), 0.5).value(), 5.0);
  EXPECT_EQ(fuse(sight(4), sound(6), 0.5).modality(), Modality::fused);
  EXPECT_THROW(fuse(sight(4), sound(6), -0.01), ArgumentError);
  EXPECT_THROW(fuse(sight(4), sound(6), 1.01), ArgumentError);
}

TEST(Fuse, StaysWithinModalityRange) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> c(0.0, 1e4), g(0.0, 1.0);
  for (int i = 0; i < 20000; ++i) {
    const double a = c(rng), b = c(rng), gamma = g(rng);
    const double f = fuse(sight(a), sound(b), gamma).value();
    EXPECT_GE(f, std::min(a, b));
    EXPECT_LE(f, std::max(a, b));
  }
}

TEST(ReliabilityLoss, ExamplesAndMaeEquivalence) {
  EXPECT_DOUBLE_EQ(reliability_loss(std::vector<double>{4, 7}, labels_of({4, 7})), 0.0);
  EXPECT_DOUBLE_EQ(reliability_loss(std::vector<double>{5}, labels_of({4})), 0.25);
  EXPECT_DOUBLE_EQ(reliability_loss(std::vector<double>{2, 8}, labels_of({4, 8})), 0.25);
  EXPECT_THROW(reliability_loss(std::vector<double>{1}, labels_of({1, 2})), ArgumentError);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.5, 20.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> f;
    std::vector<CountPrediction> p;
    std::vector<CountLabel> l;
    for (int i = 0; i < 7; ++i) {
      f.push_back(u(rng));
      p.emplace_back(f.back(), Modality::fused);
      l.emplace_back(u(rng));
    }
    EXPECT_NEAR(reliability_loss(f, l), mae(p, l), 1e-12);
  }
}

TEST(GateLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.5, 15.0), g(0.05, 0.95);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 6;
    std::vector<double> gammas(n), cv(n), ca(n);
    std::vector<CountLabel> labels;
    for (std::size_t i = 0; i < n; ++i) {
      gammas[i] = g(rng);
      cv[i] = u(rng);
      ca[i] = u(rng);
      labels.emplace_back(u(rng));
    }
    const GateLoss lg = gate_loss(gammas, cv, ca, labels);
    auto f = [&] { return gate_loss(gammas, cv, ca, labels).value; };
    EXPECT_LT(avtest::max_gradient_error(f, gammas, lg.d_gamma, 1e-7), 1e-4);
  }
}

TEST(ReliabilityGate, ZeroInitIsOneHalf) {
  std::mt19937_64 rng(4);
  ReliabilityGate gate(6, 3, rng);
  gate.zero_parameters();
  const std::vector<double> v(6, 0.0);
  EXPECT_DOUBLE_EQ(gate.gamma(v, Tensor({1, 3, 1, 4, 4})), 0.5);
  EXPECT_THROW(gate.forward(Tensor({1, 5}), Tensor({1, 3, 1, 4, 4}), nn::Mode::eval), ArgumentError);
}

TEST(ReliabilityGate, ParameterGradientCheck) {
  std::mt19937_64 rng(5);
  ReliabilityGate gate(4, 2, rng);
  const Tensor v = avtest::random_tensor({3, 4}, rng), a = avtest::random_tensor({3, 2, 1, 3, 3}, rng);
  const std::vector<double> cv{2.0, 9.0, 4.0}, ca{5.0, 6.0, 1.0};
  const auto labels = labels_of({5, 6, 4});
  auto loss = [&] { return gate_loss(gate.forward(v, a, nn::Mode::train), cv, ca, labels).value; };
  auto params = gate.params();
  params.zero_grad();
  const GateLoss lg = gate_loss(gate.forward(v, a, nn::Mode::train), cv, ca, labels);
  gate.backward(lg.d_gamma);
  for (const auto& [name, p] : params.entries()) {
    if (!p->trainable) continue;
    std::vector<double> g(p->grad.values().begin(), p->grad.values().end());
    EXPECT_LT(avtest::max_gradient_error(loss, p->value.storage(), g), 1e-4) << name;
  }
}

namespace {

// Trains the gate where one stream is exact and the other corrupted; returns mean gamma.
double trained_gamma(bool sound_exact) {
  std::mt19937_64 rng(6);
  ReliabilityGate gate(4, 2, rng);
  nn::Sgd sgd(gate.params(), {0.05, 0.9, 0.0, 5.0});
  std::uniform_real_distribution<double> u(2.0, 10.0);
  const int n = 8;
  for (int step = 0; step < 60; ++step) {
    const Tensor v = avtest::random_tensor({n, 4}, rng), a = avtest::random_tensor({n, 2, 1, 3, 3}, rng);
    std::vector<double> cv(n), ca(n);
    std::vector<CountLabel> labels;
    for (int i = 0; i < n; ++i) {
      const double l = u(rng);
      labels.emplace_back(l);
      (sound_exact ? ca : cv)[static_cast<std::size_t>(i)] = l;
      (sound_exact ? cv : ca)[static_cast<std::size_t>(i)] = l * (rng() % 2 ? 1.6 : 0.4);
    }
    sgd.zero_grad();
    const GateLoss lg = gate_loss(gate.forward(v, a, nn::Mode::train), cv, ca, labels);
    gate.backward(lg.d_gamma);
    sgd.step();
  }
  const Tensor v = avtest::random_tensor({32, 4}, rng), a = avtest::random_tensor({32, 2, 1, 3, 3}, rng);
  const auto g = gate.forward(v, a, nn::Mode::eval);
  double s = 0.0;
  for (double x : g) s += x;
  return s / static_cast<double>(g.size());
}

}  // namespace

TEST(ReliabilityGate, LearnsToTrustTheExactStream) {
  EXPECT_GT(trained_gamma(true), 0.5);
  EXPECT_LT(trained_gamma(false), 0.5);
}

TEST(EmpiricalPredictions, AveragesQualifyingEpochs) {
  const std::vector<EpochPredictions> both{epoch(0.30, {{"v", 4.0}}), epoch(0.35, {{"v", 6.0}})};
  const auto a = average_qualifying(both, 0.36, {{"v", 9.0}});
  EXPECT_DOUBLE_EQ(a.average.at("v"), 5.0);
  EXPECT_EQ(a.recordings.at("v"), 2);
  EXPECT_FALSE(a.fallback);

  const std::vector<EpochPredictions> second{epoch(0.40, {}), epoch(0.35, {{"v", 6.0}})};
  const auto b = average_qualifying(second, 0.36, {{"v", 9.0}});
  EXPECT_DOUBLE_EQ(b.average.at("v"), 6.0);
  EXPECT_EQ(b.recordings.at("v"), 1);

  const std::vector<EpochPredictions> none{epoch(0.50, {}), epoch(0.45, {})};
  const auto c = average_qualifying(none, 0.36, {{"v", 9.0}});
  EXPECT_TRUE(c.fallback);
  EXPECT_DOUBLE_EQ(c.average.at("v"), 9.0);
  // Threshold is strict.
  EXPECT_TRUE(average_qualifying(std::vector<EpochPredictions>{epoch(0.36, {{"v", 1.0}})}, 0.36, {{"v", 2.0}}).fallback);
}

TEST(EmpiricalPredictions, TableCombinesStreamsAndRoundTrips) {
  const std::vector<EpochPredictions> sv{epoch(0.2, {{"a", 3.0}, {"b", 5.0}}), epoch(0.3, {{"a", 5.0}, {"b", 7.0}})};
  const std::vector<EpochPredictions> sa{epoch(0.5, {})};
  ReliabilityConfig cfg;
  const auto table = collect_empirical_predictions(sv, {{"a", 1.0}, {"b", 1.0}}, sa, {{"a", 8.0}, {"b", 2.0}}, cfg);
  ASSERT_EQ(table.size(), 2u);
  EXPECT_DOUBLE_EQ(table.at("a").avg_sight_pred, 4.0);
  EXPECT_EQ(table.at("a").n_recordings_v, 2);
  EXPECT_DOUBLE_EQ(table.at("a").avg_sound_pred, 8.0);
  EXPECT_TRUE(table.at("a").fallback_a);
  EXPECT_FALSE(table.at("a").fallback_v);

  avtest::TempDir dir("empirical");
  save_empirical_table(dir.path() / "t.jsonl", table);
  const auto back = load_empirical_table(dir.path() / "t.jsonl");
  ASSERT_EQ(back.size(), table.size());
  for (const auto& [id, e] : table) {
    const auto& r = back.at(id);
    EXPECT_EQ(r.avg_sight_pred, e.avg_sight_pred);
    EXPECT_EQ(r.avg_sound_pred, e.avg_sound_pred);
    EXPECT_EQ(r.n_recordings_v, e.n_recordings_v);
    EXPECT_EQ(r.n_recordings_a, e.n_recordings_a);
    EXPECT_EQ(r.fallback_v, e.fallback_v);
    EXPECT_EQ(r.fallback_a, e.fallback_a);
  }
  EXPECT_THROW(load_empirical_table(dir.path() / "missing.jsonl"), DependencyError);
}
