#include "avcount/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>

#include "avcount/errors.hpp"

namespace avcount {

namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

}  // namespace

void validate(const SpectrogramConfig& c) {
  if (c.sample_rate <= 0) throw ConfigError("sample_rate must be positive");
  if (c.fft_size < 2 || c.fft_size % 2 != 0) throw ConfigError("fft_size must be even and >= 2");
  if (c.hop < 1) throw ConfigError("hop must be >= 1");
  if (c.segment_frames < 1) throw ConfigError("segment_frames must be >= 1");
}

Spectrogram::Spectrogram(int b, int f, double fill)
    : bins(b), frames(f), values(static_cast<std::size_t>(b) * static_cast<std::size_t>(f), fill) {}

int stft_frame_count(std::size_t samples, const SpectrogramConfig& config) {
  const auto n = static_cast<std::size_t>(config.fft_size);
  if (samples < n) return 0;
  return static_cast<int>((samples - n) / static_cast<std::size_t>(config.hop)) + 1;
}

Spectrogram stft_spectrogram(const AudioWaveform& waveform, const SpectrogramConfig& config) {
  validate(config);
  if (waveform.sample_rate <= 0) throw ArgumentError("waveform sample_rate must be positive");
  const int frames = stft_frame_count(waveform.samples.size(), config);
  if (frames < 1)
    throw DomainError("waveform of " + std::to_string(waveform.samples.size()) + " samples is shorter than one " +
                      std::to_string(config.fft_size) + "-sample window");
  const int n = config.fft_size;
  const int bins = config.bins();

  std::vector<double> window(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) window[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);

  std::unique_ptr<double, FftwFree> in(static_cast<double*>(fftw_malloc(sizeof(double) * static_cast<std::size_t>(n))));
  std::unique_ptr<fftw_complex, FftwFree> out(
      static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * static_cast<std::size_t>(bins))));
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_r2c_1d(n, in.get(), out.get(), FFTW_ESTIMATE);
  }
  if (plan == nullptr) throw DependencyError("FFTW could not create a plan");

  Spectrogram spec(bins, frames);
  for (int t = 0; t < frames; ++t) {
    const double* src = waveform.samples.data() + static_cast<std::size_t>(t) * config.hop;
    for (int i = 0; i < n; ++i) in.get()[i] = src[i] * window[static_cast<std::size_t>(i)];
    fftw_execute(plan);
    for (int f = 0; f < bins; ++f) {
      const double mag = std::hypot(out.get()[f][0], out.get()[f][1]);
      spec.at(f, t) = config.log_compression ? std::log1p(mag) : mag;
    }
  }
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  return spec;
}

std::vector<Spectrogram> segment_and_resize(const Spectrogram& spec, int n_segments, int segment_frames) {
  if (n_segments < 1) throw ArgumentError("n_segments must be >= 1");
  if (segment_frames < 1) throw ArgumentError("segment_frames must be >= 1");
  if (spec.bins < 1 || spec.frames < 1) throw DomainError("empty spectrogram");
  const int total = n_segments * segment_frames;
  const int len = spec.frames;
  std::vector<Spectrogram> out;
  out.reserve(static_cast<std::size_t>(n_segments));
  for (int s = 0; s < n_segments; ++s) {
    Spectrogram seg(spec.bins, segment_frames);
    for (int j = 0; j < segment_frames; ++j) {
      const int col = s * segment_frames + j;
      const double pos = total > 1 ? static_cast<double>(col) * (len - 1) / (total - 1) : 0.0;
      const int lo = std::min(static_cast<int>(std::floor(pos)), len - 1);
      const int hi = std::min(lo + 1, len - 1);
      const double w = pos - lo;
      for (int f = 0; f < spec.bins; ++f) seg.at(f, j) = (1.0 - w) * spec.at(f, lo) + w * spec.at(f, hi);
    }
    out.push_back(std::move(seg));
  }
  return out;
}

AudioWaveform resample(const AudioWaveform& waveform, int target_rate) {
  if (target_rate <= 0 || waveform.sample_rate <= 0) throw ArgumentError("sample rates must be positive");
  if (target_rate == waveform.sample_rate) return waveform;
  const double ratio = static_cast<double>(target_rate) / waveform.sample_rate;
  const double cutoff = std::min(1.0, ratio);
  constexpr int kZeroCrossings = 16;
  const double half_width = kZeroCrossings / cutoff;
  const auto in_len = static_cast<long>(waveform.samples.size());
  const auto out_len = static_cast<long>(std::floor(static_cast<double>(in_len) * ratio));

  AudioWaveform out;
  out.sample_rate = target_rate;
  out.samples.assign(static_cast<std::size_t>(std::max(out_len, 0L)), 0.0);
  for (long i = 0; i < out_len; ++i) {
    const double t = static_cast<double>(i) * waveform.sample_rate / target_rate;
    const long k0 = std::max(0L, static_cast<long>(std::ceil(t - half_width)));
    const long k1 = std::min(in_len - 1, static_cast<long>(std::floor(t + half_width)));
    double acc = 0.0;
    for (long k = k0; k <= k1; ++k) {
      const double x = t - static_cast<double>(k);
      const double arg = std::numbers::pi * cutoff * x;
      const double sinc = std::abs(arg) < 1e-12 ? 1.0 : std::sin(arg) / arg;
      const double win = 0.5 + 0.5 * std::cos(std::numbers::pi * x / half_width);
      acc += waveform.samples[static_cast<std::size_t>(k)] * cutoff * sinc * win;
    }
    out.samples[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

}  // namespace avcount
