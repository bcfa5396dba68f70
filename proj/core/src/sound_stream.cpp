#include "avcount/sound_stream.hpp"

#include <algorithm>

#include "avcount/errors.hpp"

namespace avcount {

using nn::Triple;

Backbone make_sound_backbone(const SoundBackboneConfig& config) {
  if (config.feature_dim < 1) throw ConfigError("sound feature_dim must be positive");
  std::vector<std::unique_ptr<nn::Sequential>> stages;
  auto stem = std::make_unique<nn::Sequential>();

  if (config.variant == BackboneVariant::tiny) {
    const auto& w = config.tiny_widths;
    for (int c : w)
      if (c < 1) throw ConfigError("tiny backbone widths must be positive");
    if (w.back() != config.feature_dim) throw ConfigError("last tiny sound width must equal feature_dim");
    stem->emplace<nn::Conv3d>(nn::ConvSpec{1, w[0], {1, 3, 3}, {1, 4, 2}, {0, 1, 1}, false});
    stem->emplace<nn::BatchNorm>(w[0]);
    stem->emplace<nn::ReLU>();
    stem->emplace<nn::Pool3d>(nn::PoolKind::average, Triple{1, 2, 2}, Triple{1, 2, 2});
    stages.push_back(std::move(stem));
    int in = w[0];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const int s = i == 0 ? 1 : 2;
      auto block = std::make_unique<nn::Sequential>();
      block->emplace<nn::ResidualBlock>(in, w[i], Triple{1, 3, 3}, Triple{1, s, s});
      stages.push_back(std::move(block));
      in = w[i];
    }
    return Backbone(std::move(stages), 3, config.feature_dim);
  }

  stem->emplace<nn::Conv3d>(nn::ConvSpec{1, 64, {1, 7, 7}, {1, 2, 2}, {0, 3, 3}, false});
  stem->emplace<nn::BatchNorm>(64);
  stem->emplace<nn::ReLU>();
  stem->emplace<nn::Pool3d>(nn::PoolKind::max, Triple{1, 3, 3}, Triple{1, 2, 2}, Triple{0, 1, 1});
  stages.push_back(std::move(stem));
  const std::array<int, 4> widths{64, 128, 256, 512};
  int in = 64;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const int s = i == 0 ? 1 : 2;
    auto layer = std::make_unique<nn::Sequential>();
    layer->emplace<nn::ResidualBlock>(in, widths[i], Triple{1, 3, 3}, Triple{1, s, s});
    layer->emplace<nn::ResidualBlock>(widths[i], widths[i], Triple{1, 3, 3}, Triple{1, 1, 1});
    stages.push_back(std::move(layer));
    in = widths[i];
  }
  if (config.feature_dim != 512) {
    auto proj = std::make_unique<nn::Sequential>();
    proj->emplace<nn::Conv3d>(nn::ConvSpec{512, config.feature_dim, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, false});
    proj->emplace<nn::BatchNorm>(config.feature_dim);
    proj->emplace<nn::ReLU>();
    stages.push_back(std::move(proj));
  }
  return Backbone(std::move(stages), 3, config.feature_dim);
}

int sound_tap_channels(const SoundBackboneConfig& config) {
  return config.variant == BackboneVariant::tiny ? config.tiny_widths[2] : 256;
}

SoundModel::SoundModel(SoundConfig config, std::mt19937_64& rng)
    : config_(config), model_(Modality::sound, make_sound_backbone(config.backbone), config.head, rng) {
  validate(config_.spectrogram);
  if (config_.n_segments < 1) throw ConfigError("n_segments must be >= 1");
}

std::vector<Spectrogram> SoundModel::segments(const AudioWaveform& waveform) const {
  const AudioWaveform mono = resample(waveform, config_.spectrogram.sample_rate);
  return segment_and_resize(stft_spectrogram(mono, config_.spectrogram), config_.n_segments,
                            config_.spectrogram.segment_frames);
}

std::vector<Spectrogram> SoundModel::segments(const AudioSource& source, double start_s, double end_s) const {
  return segments(source.slice(start_s, end_s));
}

Tensor SoundModel::to_input(std::span<const Spectrogram> segs) const {
  if (segs.empty()) throw ArgumentError("no spectrogram segments");
  const int bins = config_.spectrogram.bins(), frames = config_.spectrogram.segment_frames;
  Tensor x({static_cast<int>(segs.size()), 1, 1, bins, frames});
  for (std::size_t i = 0; i < segs.size(); ++i) {
    if (segs[i].bins != bins || segs[i].frames != frames)
      throw ArgumentError("spectrogram segment is " + std::to_string(segs[i].bins) + "x" +
                          std::to_string(segs[i].frames) + ", expected " + std::to_string(bins) + "x" +
                          std::to_string(frames));
    std::copy(segs[i].values.begin(), segs[i].values.end(), x.data() + i * x.stride0());
  }
  return x;
}

SoundResult SoundModel::sound_count(std::span<const Spectrogram> segs) {
  auto batch = model_.forward(to_input(segs), nn::Mode::eval);
  double total = 0.0;
  for (const auto& h : batch.heads) total += h.count;
  SoundResult r;
  r.prediction = CountPrediction(std::max(total, 0.0), Modality::sound);
  const int f = batch.features.dim(1);
  r.feature.assign(batch.features.data(), batch.features.data() + f);
  r.mid = batch.mid.sample(0);
  r.heads = std::move(batch.heads);
  return r;
}

}  // namespace avcount
