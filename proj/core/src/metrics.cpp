#include "avcount/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "avcount/errors.hpp"

namespace avcount {

namespace {

void check_inputs(std::span<const CountPrediction> preds, std::span<const CountLabel> gts) {
  if (preds.empty()) throw ArgumentError("metrics need at least one prediction");
  if (preds.size() != gts.size())
    throw ArgumentError("prediction/label length mismatch: " + std::to_string(preds.size()) + " vs " +
                        std::to_string(gts.size()));
  for (const auto& g : gts)
    if (!(g.value() > 0.0)) throw DomainError("ground-truth count must be positive");
}

}  // namespace

double mae(std::span<const CountPrediction> preds, std::span<const CountLabel> gts) {
  check_inputs(preds, gts);
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) sum += std::abs(preds[i].value() - gts[i].value()) / gts[i].value();
  return sum / static_cast<double>(preds.size());
}

double obo(std::span<const CountPrediction> preds, std::span<const CountLabel> gts) {
  check_inputs(preds, gts);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (std::abs(preds[i].value() - gts[i].value()) <= 1.0) ++hits;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

EvalReport evaluate_report(std::span<const CountPrediction> preds, std::span<const CountLabel> gts,
                           std::span<const TagSet> tags) {
  EvalReport report;
  report.mae = mae(preds, gts);
  report.obo = obo(preds, gts);
  report.n = preds.size();
  if (tags.empty()) return report;
  if (tags.size() != preds.size()) throw ArgumentError("challenge tags must align with predictions");

  std::map<ChallengeTag, double> sums;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double err = std::abs(preds[i].value() - gts[i].value()) / gts[i].value();
    for (ChallengeTag t : tags[i]) {
      sums[t] += err;
      ++report.per_tag_count[t];
    }
  }
  for (const auto& [tag, sum] : sums) report.per_tag_mae[tag] = sum / static_cast<double>(report.per_tag_count[tag]);
  return report;
}

double best_constant_prediction(std::span<const CountLabel> gts) {
  if (gts.empty()) throw ArgumentError("best constant needs at least one label");
  // sum_i |c - l_i| / l_i is convex piecewise-linear in c with kinks at the
  // labels, so the minimum sits at the weighted median of the labels.
  std::vector<double> labels;
  labels.reserve(gts.size());
  double total = 0.0;
  for (const auto& g : gts) {
    labels.push_back(g.value());
    total += 1.0 / g.value();
  }
  std::sort(labels.begin(), labels.end());
  double acc = 0.0;
  for (double l : labels) {
    acc += 1.0 / l;
    if (acc >= 0.5 * total) return l;
  }
  return labels.back();
}

}  // namespace avcount
