#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "avcount/errors.hpp"
#include "avcount/stride_decision.hpp"
#include "test_support.hpp"

using namespace avcount;

namespace {

std::map<int, double> counts_of(std::initializer_list<double> values) {
  std::map<int, double> m;
  int s = 1;
  for (double v : values) m[s++] = v;
  return m;
}

StrideModuleConfig with_k(int k) {
  StrideModuleConfig c;
  c.s_k_train = k;
  c.s_k_infer = k;
  return c;
}

SightConfig tiny_sight() {
  SightConfig c;
  c.clip = {8, 16};
  c.backbone.variant = BackboneVariant::tiny;
  c.backbone.tiny_widths = {4, 4, 6};
  c.backbone.feature_dim = 8;
  c.head = HeadConfig{8, 2};
  return c;
}

FrameArraySource noise_video(long frames, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<Frame> out;
  for (long i = 0; i < frames; ++i) {
    Frame f{16, 16, std::vector<float>(16 * 16 * 3)};
    for (auto& v : f.rgb) v = u(rng);
    out.push_back(std::move(f));
  }
  return FrameArraySource(std::move(out), 25.0);
}

}  // namespace

TEST(RankingLoss, Examples) {
  EXPECT_DOUBLE_EQ(ranking_loss(std::vector<double>{0.1}, std::vector<double>{3.5}, 2.9), 0.0);
  EXPECT_DOUBLE_EQ(ranking_loss(std::vector<double>{1.0}, std::vector<double>{1.0}, 2.9), 2.9);
  EXPECT_NEAR(ranking_loss(std::vector<double>{1.0}, std::vector<double>{2.0}, 2.9), 1.9, 1e-12);
  EXPECT_NEAR(ranking_loss(std::vector<double>{1.0, 0.1}, std::vector<double>{2.0, 3.5}, 2.9), 0.95, 1e-12);
  EXPECT_THROW(ranking_loss(std::vector<double>{1.0}, std::vector<double>{}, 2.9), ArgumentError);
}

TEST(RankingLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 6;
    std::vector<double> neg(n), pos(n);
    for (std::size_t i = 0; i < n; ++i) {
      neg[i] = u(rng);
      pos[i] = u(rng);
      // Keep away from the hinge kink.
      if (std::abs(neg[i] - pos[i] + 2.9) < 1e-3) pos[i] += 0.01;
    }
    const RankingLoss r = ranking_loss_grad(neg, pos, 2.9);
    EXPECT_NEAR(r.value, ranking_loss(neg, pos, 2.9), 1e-15);
    auto f = [&] { return ranking_loss(neg, pos, 2.9); };
    EXPECT_LT(avtest::max_gradient_error(f, neg, r.d_neg), 1e-4);
    EXPECT_LT(avtest::max_gradient_error(f, pos, r.d_pos), 1e-4);
  }
}

TEST(Coverage, DefinitionAndMonotonicity) {
  EXPECT_TRUE(covers_two_repetitions(2, 64, 63.0));
  EXPECT_FALSE(covers_two_repetitions(2, 64, 63.5));
  for (double period = 1.0; period < 200.0; period += 3.7) {
    bool seen = false;
    for (int s = 1; s <= 16; ++s) {
      const bool c = covers_two_repetitions(s, 64, period);
      if (seen) EXPECT_TRUE(c);
      seen = seen || c;
    }
  }
}

TEST(Mining, DeviationRule) {
  // period 10, clip 64: every stride covers two repetitions, so S* = 1.
  const auto r = mine_from_counts(10.0, 64, counts_of({10, 7, 8, 10, 13}), with_k(5));
  ASSERT_TRUE(r.usable);
  EXPECT_EQ(r.positive_stride, 1);
  EXPECT_NEAR(r.deviations.at(2), 0.3, 1e-12);
  EXPECT_NEAR(r.deviations.at(3), 0.2, 1e-12);
  EXPECT_EQ(r.deviations.at(1), 0.0);
  // Over-counting (negative deviation) is not a negative.
  EXPECT_EQ(r.negative_strides, (std::set<int>{2}));
}

TEST(Mining, CoverageRuleRegardlessOfDeviation) {
  // period 70: (64-1)*s >= 140 first at s = 3.
  const auto r = mine_from_counts(70.0, 64, counts_of({5, 5, 5, 5, 5}), with_k(5));
  EXPECT_EQ(r.positive_stride, 3);
  EXPECT_EQ(r.negative_strides, (std::set<int>{1, 2}));
  EXPECT_FALSE(r.negative_strides.contains(r.positive_stride));
}

TEST(Mining, UnusableWhenNothingCovers) {
  const auto r = mine_from_counts(1000.0, 64, counts_of({1, 2, 3}), with_k(3));
  EXPECT_FALSE(r.usable);
  EXPECT_EQ(r.positive_stride, 0);
  EXPECT_THROW(mine_from_counts(10.0, 64, counts_of({1, 2}), with_k(3)), ArgumentError);
  EXPECT_THROW(mine_from_counts(0.0, 64, counts_of({1, 2, 3}), with_k(3)), DomainError);
}

TEST(Mining, PropertyAgainstBruteForce) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> period(2.0, 120.0), count(0.0, 12.0);
  const StrideModuleConfig cfg;
  for (int trial = 0; trial < 300; ++trial) {
    const double p = period(rng);
    std::map<int, double> counts;
    for (int s = 1; s <= 8; ++s) counts[s] = count(rng);
    const auto r = mine_from_counts(p, 64, counts, cfg);
    int star = 0;
    for (int s = 1; s <= 8 && star == 0; ++s)
      if (63.0 * s >= 2.0 * p) star = s;
    ASSERT_EQ(r.positive_stride, star);
    if (star == 0) continue;
    std::set<int> want;
    for (int s = 1; s <= 8; ++s) {
      if (s == star) continue;
      const double c = counts[star];
      const double d = c > 1e-9 ? (c - counts[s]) / c : 0.0;
      if (63.0 * s < 2.0 * p || d > 0.29) want.insert(s);
    }
    EXPECT_EQ(r.negative_strides, want);
  }
}

TEST(ArgmaxStride, ExamplesAndShiftInvariance) {
  EXPECT_EQ(argmax_stride(std::vector<double>{0.1, 0.9, 0.3}), 2);
  EXPECT_EQ(argmax_stride(std::vector<double>{0.4, 0.4, 0.4}), 1);
  EXPECT_EQ(argmax_stride(std::vector<double>{0.1, 0.5, 0.5}), 2);
  EXPECT_THROW(argmax_stride(std::vector<double>{}), ArgumentError);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> s(5);
    for (auto& v : s) v = u(rng);
    const int base = argmax_stride(s);
    const double shift = u(rng);
    for (auto& v : s) v += shift;
    EXPECT_EQ(argmax_stride(s), base);
  }
}

TEST(StrideModule, ZeroInitScoresZeroAndIsDeterministic) {
  std::mt19937_64 rng(4);
  StrideModule m(4, 5, StrideModuleConfig{}, rng);
  const Tensor v({1, 4, 2, 3, 3}), a({1, 5, 1, 3, 4});
  const Tensor rv = avtest::random_tensor({1, 4, 2, 3, 3}, rng), ra = avtest::random_tensor({1, 5, 1, 3, 4}, rng);
  EXPECT_EQ(m.score_stride(rv, &ra), m.score_stride(rv, &ra));
  m.zero_parameters();
  EXPECT_EQ(m.score_stride(v, &a), 0.0);
  EXPECT_EQ(m.score_stride(rv, &ra), 0.0);
}

TEST(StrideModule, MissingAudioIsAnError) {
  std::mt19937_64 rng(5);
  StrideModule m(4, 5, StrideModuleConfig{}, rng);
  EXPECT_THROW(m.score_stride(Tensor({1, 4, 2, 3, 3}), nullptr), ArgumentError);
  StrideModuleConfig visual_only;
  visual_only.audio_enabled = false;
  StrideModule v(4, 0, visual_only, rng);
  EXPECT_NO_THROW(v.score_stride(Tensor({1, 4, 2, 3, 3}), nullptr));
}

TEST(StrideModule, GradientCheck) {
  std::mt19937_64 rng(6);
  StrideModule m(3, 2, StrideModuleConfig{}, rng);
  const Tensor v = avtest::random_tensor({3, 3, 2, 3, 3}, rng), a = avtest::random_tensor({3, 2, 1, 3, 3}, rng);
  const std::vector<double> w{0.7, -1.3, 0.4};
  auto loss = [&] {
    const auto s = m.forward(v, &a, nn::Mode::train);
    return w[0] * s[0] + w[1] * s[1] + w[2] * s[2];
  };
  auto params = m.params();
  params.zero_grad();
  m.forward(v, &a, nn::Mode::train);
  m.backward(w);
  for (const auto& [name, p] : params.entries()) {
    if (!p->trainable) continue;
    std::vector<double> g(p->grad.values().begin(), p->grad.values().end());
    EXPECT_LT(avtest::max_gradient_error(loss, p->value.storage(), g), 1e-4) << name;
  }
}

TEST(StrideModule, SaveLoadRoundTrip) {
  avtest::TempDir dir("stride");
  std::mt19937_64 rng(7);
  StrideModule a(3, 2, StrideModuleConfig{}, rng), b(3, 2, StrideModuleConfig{}, rng);
  a.save(dir.path() / "s.bin");
  b.load(dir.path() / "s.bin");
  const Tensor v = avtest::random_tensor({1, 3, 2, 3, 3}, rng), au = avtest::random_tensor({1, 2, 1, 3, 3}, rng);
  EXPECT_EQ(a.score_stride(v, &au), b.score_stride(v, &au));
}

TEST(MiningSidecar, RoundTrip) {
  avtest::TempDir dir("mining");
  auto r1 = mine_from_counts(30.0, 64, counts_of({4, 3.9, 2, 4.2, 1}), with_k(5));
  r1.video_id = "a";
  auto r2 = mine_from_counts(5000.0, 64, counts_of({1, 1, 1, 1, 1}), with_k(5));
  r2.video_id = "b";
  const std::vector<StrideMiningResult> rs{r1, r2};
  save_mining(dir.path() / "m.jsonl", rs);
  const auto back = load_mining(dir.path() / "m.jsonl");
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].video_id, rs[i].video_id);
    EXPECT_EQ(back[i].usable, rs[i].usable);
    EXPECT_EQ(back[i].positive_stride, rs[i].positive_stride);
    EXPECT_EQ(back[i].negative_strides, rs[i].negative_strides);
    EXPECT_EQ(back[i].per_stride_counts, rs[i].per_stride_counts);
    EXPECT_EQ(back[i].deviations, rs[i].deviations);
  }
  {
    std::ifstream good(dir.path() / "m.jsonl");
    std::string first;
    std::getline(good, first);
    std::ofstream(dir.path() / "bad.jsonl") << first << "\nnot json\n";
  }
  try {
    load_mining(dir.path() / "bad.jsonl");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(MineStrides, MatchesPerStrideVideoCounts) {
  std::mt19937_64 rng(8);
  SightModel sight(tiny_sight(), rng);
  const auto video = noise_video(60, rng);
  const SegmentFrames seg{0, 60};
  StrideModuleConfig cfg = with_k(4);
  std::vector<VisualFeatures> feats;
  const auto r = mine_strides(video, seg, 6.0, sight, cfg, &feats);
  ASSERT_EQ(feats.size(), 4u);
  std::map<int, double> direct;
  for (int s = 1; s <= 4; ++s) direct[s] = sight.video_count(video, seg, s).count;
  const auto want = mine_from_counts(6.0, 8, direct, cfg);
  EXPECT_EQ(r.per_stride_counts, direct);
  EXPECT_EQ(r.positive_stride, want.positive_stride);
  EXPECT_EQ(r.negative_strides, want.negative_strides);
  // (8-1)*s >= 12 first at s = 2.
  EXPECT_EQ(r.positive_stride, 2);
  EXPECT_TRUE(r.negative_strides.contains(1));
}

TEST(SelectStride, FixedStrideAndMissingModule) {
  std::mt19937_64 rng(9);
  SightModel sight(tiny_sight(), rng);
  const auto video = noise_video(40, rng);
  const StrideChoice c = select_stride(video, {0, 40}, sight, nullptr, nullptr, 3);
  EXPECT_EQ(c.stride, 3);
  EXPECT_TRUE(c.scores.empty());
  EXPECT_THROW(select_stride(video, {0, 40}, sight, nullptr, nullptr), DependencyError);
}

TEST(SelectStride, PicksArgmaxOfModuleScores) {
  std::mt19937_64 rng(10);
  SightModel sight(tiny_sight(), rng);
  const auto video = noise_video(40, rng);
  StrideModuleConfig cfg = with_k(4);
  cfg.audio_enabled = false;
  StrideModule module(sight_tap_channels(sight.config().backbone), 0, cfg, rng);
  const StrideChoice c = select_stride(video, {0, 40}, sight, nullptr, &module);
  ASSERT_EQ(c.scores.size(), 4u);
  EXPECT_EQ(c.stride, argmax_stride(c.scores));
  for (int s = 1; s <= 4; ++s) {
    const auto f = sight.extract_visual_features(make_clip(video, {0, 40}, 0, s, sight.config().clip));
    EXPECT_NEAR(c.scores[static_cast<std::size_t>(s - 1)], module.score_stride(f.mid, nullptr), 1e-12);
  }
  module.zero_parameters();
  EXPECT_EQ(select_stride(video, {0, 40}, sight, nullptr, &module).stride, 1);
}
