#pragma once

#include <array>
#include <span>
#include <vector>

#include "avcount/media.hpp"
#include "avcount/stream_model.hpp"

namespace avcount {

struct ClipConfig {
  int clip_len = 64;     // T
  int resolution = 112;  // H = W
};

enum class BackboneVariant { tiny, full };

struct SightBackboneConfig {
  /// full: separable 3D conv stack (S3D-class) ending in a 512-d feature.
  /// tiny: four conv-norm-relu-pool blocks for desk-scale runs.
  BackboneVariant variant = BackboneVariant::full;
  std::array<int, 3> tiny_widths{8, 16, 16};
  int feature_dim = 512;
};

struct SightConfig {
  ClipConfig clip;
  SightBackboneConfig backbone;
  HeadConfig head{512, 41};
};

/// Frame range [begin, end) of the annotated segment.
struct SegmentFrames {
  long begin = 0;
  long end = 0;
  long length() const noexcept { return end - begin; }
};

/// Converts a segment in seconds to frame indices clipped to the video.
SegmentFrames segment_frames(double start_s, double end_s, double fps, long num_frames);

/// clip_len frames sampled every `stride` frames. frames: [T, H, W, 3] in [0, 1].
struct VideoClip {
  Tensor frames;
  int stride = 1;
  long start_frame = 0;  // first sampled index
  long end_frame = 0;    // start_frame + (T - 1) * stride, before clamping
};

/// Indices start, start + s, ..., clamped to `last_frame`.
std::vector<long> clip_frame_indices(long start, int stride, int clip_len, long last_frame);
/// Indices of the video resampled at `stride`: begin, begin + s, ... < end.
std::vector<long> resample_indices(long begin, long end, int stride);

VideoClip make_clip(const VideoSource& video, const SegmentFrames& segment, long start, int stride,
                    const ClipConfig& config);

/// Starts of non-overlapping clips tiling the segment at `stride`; at least one.
std::vector<long> tile_starts(const SegmentFrames& segment, int stride, int clip_len);

Backbone make_sight_backbone(const SightBackboneConfig& config);
/// Channels of the mid-level tap.
int sight_tap_channels(const SightBackboneConfig& config);

struct VisualFeatures {
  std::vector<double> feature;  // final pooled feature
  Tensor mid;                   // [1, C, D, H, W] tap activation
};

struct SightResult {
  CountPrediction prediction{0.0, Modality::sight};
  HeadOutput head;
  VisualFeatures features;
};

enum class ClipAggregation { sum, single_clip_extrapolation };

struct VideoCount {
  double count = 0.0;
  int clips = 0;
  VisualFeatures first_clip;  // features of the clip anchored at the segment start
};

class SightModel {
 public:
  SightModel(SightConfig config, std::mt19937_64& rng);

  const SightConfig& config() const noexcept { return config_; }
  StreamModel& stream() noexcept { return model_; }

  /// [N, 3, T, H, W] network input.
  Tensor to_input(std::span<const VideoClip> clips) const;

  VisualFeatures extract_visual_features(const VideoClip& clip);
  SightResult sight_count(const VideoClip& clip);
  std::vector<SightResult> count_clips(std::span<const VideoClip> clips);

  /// Video-level count at one stride: clips tiling the segment are counted,
  /// summed and scaled by segment length / covered length. A segment shorter
  /// than one clip is counted from a single padded clip.
  VideoCount video_count(const VideoSource& video, const SegmentFrames& segment, int stride,
                         ClipAggregation aggregation = ClipAggregation::sum);

  void save(const std::filesystem::path& path) { model_.save(path); }
  void load(const std::filesystem::path& path) { model_.load(path); }

 private:
  void check_clip(const VideoClip& clip) const;

  SightConfig config_;
  StreamModel model_;
};

}  // namespace avcount
