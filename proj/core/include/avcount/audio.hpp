#pragma once

#include <vector>

#include "avcount/media.hpp"

namespace avcount {

struct SpectrogramConfig {
  int sample_rate = 16000;
  int fft_size = 512;
  int hop = 250;
  bool log_compression = true;  // log(1 + |X|)
  int segment_frames = 500;

  int bins() const noexcept { return fft_size / 2 + 1; }
};

void validate(const SpectrogramConfig& config);

/// Magnitudes, row-major [bins][frames].
struct Spectrogram {
  int bins = 0;
  int frames = 0;
  std::vector<double> values;

  Spectrogram() = default;
  Spectrogram(int bins, int frames, double fill = 0.0);
  double& at(int f, int t) { return values[static_cast<std::size_t>(f) * frames + t]; }
  double at(int f, int t) const { return values[static_cast<std::size_t>(f) * frames + t]; }
};

/// Periodic Hann window, one-sided transform. Throws DomainError when the
/// waveform is shorter than one window.
Spectrogram stft_spectrogram(const AudioWaveform& waveform, const SpectrogramConfig& config);

/// Number of STFT frames for `samples` samples.
int stft_frame_count(std::size_t samples, const SpectrogramConfig& config);

/// Linearly interpolates the time axis to n_segments * segment_frames frames
/// (endpoints aligned) and splits it into consecutive segments.
std::vector<Spectrogram> segment_and_resize(const Spectrogram& spec, int n_segments, int segment_frames = 500);

/// Band-limited windowed-sinc resampling to `target_rate`.
AudioWaveform resample(const AudioWaveform& waveform, int target_rate);

}  // namespace avcount
