#include "avcount/types.hpp"

#include <cmath>

#include "avcount/errors.hpp"

namespace avcount {

CountLabel::CountLabel(double value) : value_(value) {
  if (!std::isfinite(value) || value <= 0.0)
    throw DomainError("count label must be positive and finite, got " + std::to_string(value));
}

CountPrediction::CountPrediction(double value, Modality modality) : value_(value), modality_(modality) {
  if (!std::isfinite(value)) throw DomainError("count prediction must be finite");
  if (value_ < 0.0) value_ = 0.0;
}

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::sight: return "sight";
    case Modality::sound: return "sound";
    case Modality::fused: return "fused";
  }
  return "unknown";
}

std::string_view to_string(ChallengeTag tag) {
  switch (tag) {
    case ChallengeTag::camera_viewpoint_changes: return "camera_viewpoint_changes";
    case ChallengeTag::cluttered_background: return "cluttered_background";
    case ChallengeTag::low_illumination: return "low_illumination";
    case ChallengeTag::fast_motion: return "fast_motion";
    case ChallengeTag::disappearing_activity: return "disappearing_activity";
    case ChallengeTag::scale_variation: return "scale_variation";
    case ChallengeTag::low_resolution: return "low_resolution";
  }
  return "unknown";
}

std::optional<ChallengeTag> parse_challenge_tag(std::string_view text) {
  for (ChallengeTag t : kAllChallengeTags)
    if (to_string(t) == text) return t;
  return std::nullopt;
}

}  // namespace avcount
