#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "avcount/datasets.hpp"

namespace avcount {

enum class VisualPattern { oscillating_blob, bouncing_dot };
enum class AudioPattern { click_train, tone_burst };

std::string_view to_string(VisualPattern p);
std::string_view to_string(AudioPattern p);

struct SyntheticSpec {
  int count = 5;
  double period_frames = 25.0;
  double period_jitter = 0.0;  // per-cycle relative period perturbation bound
  VisualPattern visual_pattern = VisualPattern::bouncing_dot;
  AudioPattern audio_pattern = AudioPattern::click_train;
  double noise_level = 0.02;   // pixel noise std
  double audio_noise = 0.02;   // background noise std
  std::optional<ChallengeTag> degradation;
  int resolution = 16;
  double fps = 25.0;
  int sample_rate = 16000;
  double lead_in_s = 0.4;
  double lead_out_s = 0.4;
  bool with_audio = true;
};

void validate(const SyntheticSpec& spec);

struct SyntheticVideo {
  VideoRecord record;
  std::shared_ptr<const VideoSource> video;
  std::shared_ptr<const AudioSource> audio;  // null when spec.with_audio is false
  std::vector<double> cycle_bounds_s;        // count + 1 cycle boundaries
  std::vector<double> event_times_s;         // one audio event per cycle
  /// Pattern position along its motion axis (pixels) at frame `index`,
  /// before degradations; the mean position is `axis_center`.
  std::vector<double> trajectory;
  double axis_center = 0.0;
};

/// Deterministic in (spec, seed). Frames and audio are rendered on access.
SyntheticVideo synth_generate(const SyntheticSpec& spec, std::uint64_t seed, std::string video_id = "synth",
                              Split split = Split::train);

struct SyntheticDatasetConfig {
  int n_train = 256;
  int n_val = 64;
  int n_test = 0;
  int min_count = 2;
  int max_count = 8;
  double min_period_frames = 16.0;
  double max_period_frames = 72.0;
  double period_jitter = 0.05;
  double degraded_fraction = 0.3;
  double noisy_audio_fraction = 0.2;
  double audio_noise = 0.02;
  double noisy_audio_noise = 0.6;
  double visual_noise = 0.03;
  int resolution = 16;
  double fps = 25.0;
  int sample_rate = 16000;
  std::uint64_t seed = 7;
};

void validate(const SyntheticDatasetConfig& config);

class SyntheticMediaProvider final : public MediaProvider {
 public:
  void add(const SyntheticVideo& video);
  std::shared_ptr<const VideoSource> video(const VideoRecord& record) const override;
  std::shared_ptr<const AudioSource> audio(const VideoRecord& record) const override;

 private:
  std::map<std::string, std::pair<std::shared_ptr<const VideoSource>, std::shared_ptr<const AudioSource>>> media_;
};

struct SyntheticDataset {
  Dataset dataset;
  std::map<std::string, SyntheticSpec> specs;
};

SyntheticDataset synth_dataset(const SyntheticDatasetConfig& config);

/// Writes PPM frame directories, WAV audio and manifest.jsonl under `dir`;
/// returns the manifest path.
std::filesystem::path materialize(const Dataset& dataset, const std::filesystem::path& dir);

}  // namespace avcount
