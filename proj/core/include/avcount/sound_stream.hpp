#pragma once

#include <array>
#include <span>
#include <vector>

#include "avcount/audio.hpp"
#include "avcount/sight_stream.hpp"
#include "avcount/stream_model.hpp"

namespace avcount {

struct SoundBackboneConfig {
  /// full: ResNet-18 over a one-channel spectrogram.
  /// tiny: strided stem and four residual blocks.
  BackboneVariant variant = BackboneVariant::full;
  std::array<int, 4> tiny_widths{8, 16, 32, 64};
  int feature_dim = 512;
};

struct SoundConfig {
  SpectrogramConfig spectrogram;
  int n_segments = 1;
  SoundBackboneConfig backbone;
  HeadConfig head{512, 43};
};

Backbone make_sound_backbone(const SoundBackboneConfig& config);
int sound_tap_channels(const SoundBackboneConfig& config);

struct SoundResult {
  CountPrediction prediction{0.0, Modality::sound};
  std::vector<HeadOutput> heads;  // one per segment
  std::vector<double> feature;    // pooled feature of the first segment
  Tensor mid;                     // [1, C, 1, H, W] tap of the first segment
};

class SoundModel {
 public:
  SoundModel(SoundConfig config, std::mt19937_64& rng);

  const SoundConfig& config() const noexcept { return config_; }
  StreamModel& stream() noexcept { return model_; }

  /// Resamples to the configured rate, then STFT and segmentation.
  std::vector<Spectrogram> segments(const AudioWaveform& waveform) const;
  /// Audio of [start_s, end_s) from `source`.
  std::vector<Spectrogram> segments(const AudioSource& source, double start_s, double end_s) const;

  /// [N, 1, 1, F, T] network input.
  Tensor to_input(std::span<const Spectrogram> segments) const;

  /// Per-segment counts summed into one prediction (clamped at 0).
  SoundResult sound_count(std::span<const Spectrogram> segments);

  void save(const std::filesystem::path& path) { model_.save(path); }
  void load(const std::filesystem::path& path) { model_.load(path); }

 private:
  SoundConfig config_;
  StreamModel model_;
};

}  // namespace avcount
