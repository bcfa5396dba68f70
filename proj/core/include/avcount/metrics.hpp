#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "avcount/types.hpp"

namespace avcount {

struct EvalReport {
  double mae = 0.0;
  double obo = 0.0;
  std::size_t n = 0;
  std::map<ChallengeTag, double> per_tag_mae;
  std::map<ChallengeTag, std::size_t> per_tag_count;
};

/// Mean relative absolute error: (1/N) sum |pred - gt| / gt.
double mae(std::span<const CountPrediction> preds, std::span<const CountLabel> gts);

/// Off-by-one accuracy: fraction of videos with |pred - gt| <= 1. Predictions
/// are compared as real numbers, without rounding.
double obo(std::span<const CountPrediction> preds, std::span<const CountLabel> gts);

/// Global MAE/OBO plus per-challenge MAE. `tags`, when non-empty, must be
/// aligned with `preds`; videos may carry several tags or none.
EvalReport evaluate_report(std::span<const CountPrediction> preds, std::span<const CountLabel> gts,
                           std::span<const TagSet> tags = {});

/// Constant prediction minimizing relative MAE over `gts` (a 1/gt-weighted median).
double best_constant_prediction(std::span<const CountLabel> gts);

}  // namespace avcount
