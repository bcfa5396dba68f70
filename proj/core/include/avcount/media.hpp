#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace avcount {

/// One RGB frame, row-major H x W x 3, intensities in [0, 1].
struct Frame {
  int height = 0;
  int width = 0;
  std::vector<float> rgb;

  float& at(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

/// Bilinear resampling (pixel-center aligned). Identity when sizes match.
Frame resize_frame(const Frame& in, int height, int width);

/// Random-access decoded video.
class VideoSource {
 public:
  virtual ~VideoSource() = default;
  virtual long num_frames() const = 0;
  virtual double fps() const = 0;
  virtual Frame frame(long index) const = 0;
};

/// Mono waveform in [-1, 1].
struct AudioWaveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  double duration_s() const { return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0; }
};

class AudioSource {
 public:
  virtual ~AudioSource() = default;
  virtual int sample_rate() const = 0;
  virtual double duration_s() const = 0;
  /// Samples covering [start_s, end_s), clipped to the available range.
  virtual AudioWaveform slice(double start_s, double end_s) const = 0;
};

/// In-memory frames.
class FrameArraySource final : public VideoSource {
 public:
  FrameArraySource(std::vector<Frame> frames, double fps);
  long num_frames() const override { return static_cast<long>(frames_.size()); }
  double fps() const override { return fps_; }
  Frame frame(long index) const override;

 private:
  std::vector<Frame> frames_;
  double fps_;
};

/// Directory of per-frame PPM (P6/P3) images read in lexicographic filename order.
class FrameDirectorySource final : public VideoSource {
 public:
  FrameDirectorySource(const std::filesystem::path& dir, double fps);
  long num_frames() const override { return static_cast<long>(files_.size()); }
  double fps() const override { return fps_; }
  Frame frame(long index) const override;

 private:
  std::vector<std::filesystem::path> files_;
  double fps_;
};

class WaveformSource final : public AudioSource {
 public:
  explicit WaveformSource(AudioWaveform waveform);
  int sample_rate() const override { return waveform_.sample_rate; }
  double duration_s() const override { return waveform_.duration_s(); }
  AudioWaveform slice(double start_s, double end_s) const override;

 private:
  AudioWaveform waveform_;
};

/// 16-bit (or 8/24/32-bit integer, or 32-bit float) linear PCM WAV; channels averaged to mono.
AudioWaveform read_wav(const std::filesystem::path& path);
/// Writes 16-bit mono PCM.
void write_wav(const std::filesystem::path& path, const AudioWaveform& waveform);

Frame read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Frame& frame);

/// Lazily loaded WAV file.
class WavFileSource final : public AudioSource {
 public:
  explicit WavFileSource(std::filesystem::path path);
  int sample_rate() const override;
  double duration_s() const override;
  AudioWaveform slice(double start_s, double end_s) const override;

 private:
  const AudioWaveform& load() const;
  std::filesystem::path path_;
  mutable std::shared_ptr<AudioWaveform> cache_;
};

/// Decodes a container file (mp4, mkv, ...) with an external `ffmpeg` found on
/// PATH into a frame directory and a WAV file under `work_dir`. Throws
/// MediaError when no decoder is available or decoding fails.
struct DecodedMedia {
  std::filesystem::path frame_dir;
  std::filesystem::path wav_path;
  double fps = 25.0;
};
DecodedMedia decode_with_external_tool(const std::filesystem::path& media, const std::filesystem::path& work_dir,
                                       double fps, int sample_rate);

}  // namespace avcount
