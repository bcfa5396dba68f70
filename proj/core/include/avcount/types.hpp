#pragma once

#include <array>
#include <optional>
#include <set>
#include <string>
#include <string_view>

namespace avcount {

/// Ground-truth repetition count. Always strictly positive.
class CountLabel {
 public:
  explicit CountLabel(double value);
  double value() const noexcept { return value_; }
  friend bool operator==(const CountLabel&, const CountLabel&) = default;

 private:
  double value_;
};

enum class Modality { sight, sound, fused };

std::string_view to_string(Modality m);

/// Non-negative predicted count tagged with the stream that produced it.
class CountPrediction {
 public:
  /// Negative inputs are clamped to zero; non-finite inputs are rejected.
  CountPrediction(double value, Modality modality);
  double value() const noexcept { return value_; }
  Modality modality() const noexcept { return modality_; }

 private:
  double value_;
  Modality modality_;
};

enum class ChallengeTag {
  camera_viewpoint_changes,
  cluttered_background,
  low_illumination,
  fast_motion,
  disappearing_activity,
  scale_variation,
  low_resolution,
};

inline constexpr std::array<ChallengeTag, 7> kAllChallengeTags = {
    ChallengeTag::camera_viewpoint_changes, ChallengeTag::cluttered_background, ChallengeTag::low_illumination,
    ChallengeTag::fast_motion,              ChallengeTag::disappearing_activity, ChallengeTag::scale_variation,
    ChallengeTag::low_resolution,
};

std::string_view to_string(ChallengeTag tag);
std::optional<ChallengeTag> parse_challenge_tag(std::string_view text);

using TagSet = std::set<ChallengeTag>;

}  // namespace avcount
