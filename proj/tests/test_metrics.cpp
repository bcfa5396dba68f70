#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "avcount/errors.hpp"
#include "avcount/metrics.hpp"

using namespace avcount;

namespace {

std::vector<CountPrediction> preds(std::initializer_list<double> v) {
  std::vector<CountPrediction> out;
  for (double x : v) out.emplace_back(x, Modality::sight);
  return out;
}

std::vector<CountLabel> labels(std::initializer_list<double> v) {
  std::vector<CountLabel> out;
  for (double x : v) out.emplace_back(x);
  return out;
}

}  // namespace

TEST(CountLabel, RejectsNonPositiveAndNonFinite) {
  EXPECT_THROW(CountLabel(0.0), DomainError);
  EXPECT_THROW(CountLabel(-2.0), DomainError);
  EXPECT_THROW(CountLabel(std::nan("")), DomainError);
  EXPECT_DOUBLE_EQ(CountLabel(3.5).value(), 3.5);
}

TEST(CountPrediction, ClampsNegativesAndRejectsNonFinite) {
  EXPECT_EQ(CountPrediction(-1.0, Modality::sound).value(), 0.0);
  EXPECT_EQ(CountPrediction(2.0, Modality::sound).modality(), Modality::sound);
  EXPECT_THROW(CountPrediction(INFINITY, Modality::sight), DomainError);
}

TEST(Mae, Examples) {
  EXPECT_DOUBLE_EQ(mae(preds({4}), labels({4})), 0.0);
  EXPECT_DOUBLE_EQ(mae(preds({5, 2}), labels({4, 4})), 0.375);
  EXPECT_DOUBLE_EQ(mae(preds({3}), labels({4})), 0.25);
}

TEST(Mae, Errors) {
  EXPECT_THROW(mae(preds({1, 2}), labels({1})), ArgumentError);
  EXPECT_THROW(mae(preds({}), labels({})), ArgumentError);
}

TEST(Obo, Examples) {
  EXPECT_DOUBLE_EQ(obo(preds({5}), labels({4})), 1.0);
  EXPECT_DOUBLE_EQ(obo(preds({7, 4}), labels({4, 4})), 0.5);
  EXPECT_DOUBLE_EQ(obo(preds({4.9}), labels({4})), 1.0);
  EXPECT_DOUBLE_EQ(obo(preds({5.01}), labels({4})), 0.0);
}

TEST(EvaluateReport, PerTagMae) {
  const std::vector<TagSet> tags{{ChallengeTag::fast_motion}, {ChallengeTag::fast_motion}};
  const auto r = evaluate_report(preds({6, 8}), labels({4, 8}), tags);
  EXPECT_DOUBLE_EQ(r.per_tag_mae.at(ChallengeTag::fast_motion), 0.25);
  EXPECT_EQ(r.per_tag_count.at(ChallengeTag::fast_motion), 2U);
  EXPECT_EQ(r.n, 2U);
}

TEST(EvaluateReport, UntaggedAndPerfect) {
  EXPECT_TRUE(evaluate_report(preds({3}), labels({4})).per_tag_mae.empty());
  const std::vector<TagSet> tags{{ChallengeTag::low_illumination}};
  const auto r = evaluate_report(preds({4}), labels({4}), tags);
  EXPECT_DOUBLE_EQ(r.mae, 0.0);
  EXPECT_DOUBLE_EQ(r.obo, 1.0);
  EXPECT_DOUBLE_EQ(r.per_tag_mae.at(ChallengeTag::low_illumination), 0.0);
}

TEST(EvaluateReport, MisalignedTagsRejected) {
  const std::vector<TagSet> tags{{}, {}};
  EXPECT_THROW(evaluate_report(preds({3}), labels({4}), tags), ArgumentError);
}

TEST(Mae, ScaleCovariantInError) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> lab(1.0, 20.0), err(-0.9, 3.0), k(0.1, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<CountLabel> gts;
    std::vector<CountPrediction> a, b;
    const double scale = k(rng);
    for (int i = 0; i < 5; ++i) {
      const double l = lab(rng), e = err(rng) * l;
      gts.emplace_back(l);
      a.emplace_back(l + e, Modality::sight);
      b.emplace_back(l + scale * e, Modality::sight);
    }
    EXPECT_NEAR(mae(b, gts), scale * mae(a, gts), 1e-12);
  }
}

TEST(BestConstant, MinimisesRelativeMae) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> count(1, 15);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<CountLabel> gts;
    for (int i = 0; i < 9; ++i) gts.emplace_back(count(rng));
    const double best = best_constant_prediction(gts);
    auto score = [&](double c) {
      std::vector<CountPrediction> p(gts.size(), CountPrediction(c, Modality::sight));
      return mae(p, gts);
    };
    const double at_best = score(best);
    // Relative MAE is piecewise linear with kinks at the labels: checking every label suffices.
    for (const auto& g : gts) EXPECT_LE(at_best, score(g.value()) + 1e-12);
    EXPECT_LE(at_best, score(best + 0.3) + 1e-12);
    EXPECT_LE(at_best, score(std::max(0.0, best - 0.3)) + 1e-12);
  }
}
