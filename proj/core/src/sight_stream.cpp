#include "avcount/sight_stream.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "avcount/errors.hpp"

namespace avcount {

using nn::Triple;

SegmentFrames segment_frames(double start_s, double end_s, double fps, long num_frames) {
  if (!(fps > 0.0)) throw ArgumentError("fps must be positive");
  if (!(end_s > start_s)) throw DomainError("segment end must be after its start");
  SegmentFrames seg;
  seg.begin = std::clamp(static_cast<long>(std::llround(start_s * fps)), 0L, num_frames);
  seg.end = std::clamp(static_cast<long>(std::llround(end_s * fps)), 0L, num_frames);
  if (seg.length() < 1) throw DomainError("segment shorter than one frame");
  return seg;
}

std::vector<long> clip_frame_indices(long start, int stride, int clip_len, long last_frame) {
  if (stride < 1) throw ArgumentError("stride must be >= 1");
  if (clip_len < 1) throw ArgumentError("clip length must be >= 1");
  std::vector<long> idx(static_cast<std::size_t>(clip_len));
  for (int i = 0; i < clip_len; ++i) idx[static_cast<std::size_t>(i)] = std::min(start + static_cast<long>(i) * stride, last_frame);
  return idx;
}

std::vector<long> resample_indices(long begin, long end, int stride) {
  if (stride < 1) throw ArgumentError("stride must be >= 1");
  std::vector<long> idx;
  for (long i = begin; i < end; i += stride) idx.push_back(i);
  return idx;
}

VideoClip make_clip(const VideoSource& video, const SegmentFrames& segment, long start, int stride,
                    const ClipConfig& config) {
  if (segment.length() < 1) throw DomainError("segment shorter than one frame");
  if (start < segment.begin || start >= segment.end) throw ArgumentError("clip start outside the segment");
  const int t_len = config.clip_len, res = config.resolution;
  VideoClip clip;
  clip.stride = stride;
  clip.start_frame = start;
  clip.end_frame = start + static_cast<long>(t_len - 1) * stride;
  clip.frames = Tensor({t_len, res, res, 3});
  const auto indices = clip_frame_indices(start, stride, t_len, segment.end - 1);
  const std::size_t plane = static_cast<std::size_t>(res) * res * 3;
  for (int t = 0; t < t_len; ++t) {
    const Frame f = resize_frame(video.frame(indices[static_cast<std::size_t>(t)]), res, res);
    std::copy(f.rgb.begin(), f.rgb.end(), clip.frames.data() + plane * static_cast<std::size_t>(t));
  }
  return clip;
}

std::vector<long> tile_starts(const SegmentFrames& segment, int stride, int clip_len) {
  const long span = static_cast<long>(clip_len) * stride;
  const long full = segment.length() / span;
  std::vector<long> starts;
  for (long k = 0; k < std::max(full, 1L); ++k) starts.push_back(segment.begin + k * span);
  return starts;
}

namespace {

std::unique_ptr<nn::Sequential> conv_block(int cin, int cout, Triple stride, std::optional<Triple> pool) {
  auto s = std::make_unique<nn::Sequential>();
  s->emplace<nn::Conv3d>(nn::ConvSpec{cin, cout, {3, 3, 3}, stride, {1, 1, 1}, false});
  s->emplace<nn::BatchNorm>(cout);
  s->emplace<nn::ReLU>();
  if (pool) s->emplace<nn::Pool3d>(nn::PoolKind::average, *pool, *pool);
  return s;
}

// Spatial (1 x k x k) then temporal (k x 1 x 1) convolution, each followed by BN + ReLU.
void add_separable(nn::Sequential& s, int cin, int cout, int k_spatial, int s_spatial, int k_temporal, int s_temporal) {
  s.emplace<nn::Conv3d>(nn::ConvSpec{cin, cout, {1, k_spatial, k_spatial}, {1, s_spatial, s_spatial},
                                     {0, k_spatial / 2, k_spatial / 2}, false});
  s.emplace<nn::BatchNorm>(cout);
  s.emplace<nn::ReLU>();
  s.emplace<nn::Conv3d>(
      nn::ConvSpec{cout, cout, {k_temporal, 1, 1}, {s_temporal, 1, 1}, {k_temporal / 2, 0, 0}, false});
  s.emplace<nn::BatchNorm>(cout);
  s.emplace<nn::ReLU>();
}

void add_pointwise(nn::Sequential& s, int cin, int cout) {
  s.emplace<nn::Conv3d>(nn::ConvSpec{cin, cout, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, false});
  s.emplace<nn::BatchNorm>(cout);
  s.emplace<nn::ReLU>();
}

}  // namespace

Backbone make_sight_backbone(const SightBackboneConfig& config) {
  if (config.feature_dim < 1) throw ConfigError("sight feature_dim must be positive");
  std::vector<std::unique_ptr<nn::Sequential>> stages;
  if (config.variant == BackboneVariant::tiny) {
    const auto& w = config.tiny_widths;
    for (int c : w)
      if (c < 1) throw ConfigError("tiny backbone widths must be positive");
    stages.push_back(conv_block(3, w[0], {1, 2, 2}, Triple{1, 2, 2}));
    stages.push_back(conv_block(w[0], w[1], {1, 1, 1}, Triple{2, 2, 2}));
    stages.push_back(conv_block(w[1], w[2], {1, 1, 1}, Triple{2, 1, 1}));
    stages.push_back(conv_block(w[2], config.feature_dim, {1, 1, 1}, std::nullopt));
    return Backbone(std::move(stages), 2, config.feature_dim);
  }

  auto s0 = std::make_unique<nn::Sequential>();
  add_separable(*s0, 3, 64, 7, 2, 7, 2);
  s0->emplace<nn::Pool3d>(nn::PoolKind::max, Triple{1, 3, 3}, Triple{1, 2, 2}, Triple{0, 1, 1});
  auto s1 = std::make_unique<nn::Sequential>();
  add_pointwise(*s1, 64, 64);
  add_separable(*s1, 64, 192, 3, 1, 3, 1);
  s1->emplace<nn::Pool3d>(nn::PoolKind::max, Triple{1, 3, 3}, Triple{1, 2, 2}, Triple{0, 1, 1});
  auto s2 = std::make_unique<nn::Sequential>();
  add_separable(*s2, 192, 480, 3, 1, 3, 1);
  s2->emplace<nn::Pool3d>(nn::PoolKind::max, Triple{3, 3, 3}, Triple{2, 2, 2}, Triple{1, 1, 1});
  auto s3 = std::make_unique<nn::Sequential>();
  add_separable(*s3, 480, 832, 3, 1, 3, 1);
  s3->emplace<nn::Pool3d>(nn::PoolKind::max, Triple{2, 2, 2}, Triple{2, 2, 2}, Triple{0, 0, 0});
  add_pointwise(*s3, 832, config.feature_dim);
  stages.push_back(std::move(s0));
  stages.push_back(std::move(s1));
  stages.push_back(std::move(s2));
  stages.push_back(std::move(s3));
  return Backbone(std::move(stages), 2, config.feature_dim);
}

int sight_tap_channels(const SightBackboneConfig& config) {
  return config.variant == BackboneVariant::tiny ? config.tiny_widths[2] : 480;
}

SightModel::SightModel(SightConfig config, std::mt19937_64& rng)
    : config_(config), model_(Modality::sight, make_sight_backbone(config.backbone), config.head, rng) {
  if (config_.clip.clip_len < 1 || config_.clip.resolution < 1) throw ConfigError("clip geometry must be positive");
}

void SightModel::check_clip(const VideoClip& clip) const {
  const Tensor::Shape want{config_.clip.clip_len, config_.clip.resolution, config_.clip.resolution, 3};
  if (clip.frames.shape() != want)
    throw ArgumentError("clip shape " + clip.frames.shape_string() + " does not match configured " +
                        Tensor(want).shape_string());
}

Tensor SightModel::to_input(std::span<const VideoClip> clips) const {
  if (clips.empty()) throw ArgumentError("no clips");
  const int t_len = config_.clip.clip_len, res = config_.clip.resolution;
  const int n = static_cast<int>(clips.size());
  Tensor x({n, 3, t_len, res, res});
  const std::size_t hw = static_cast<std::size_t>(res) * res;
  for (int i = 0; i < n; ++i) {
    check_clip(clips[static_cast<std::size_t>(i)]);
    const double* src = clips[static_cast<std::size_t>(i)].frames.data();
    double* dst = x.data() + x.stride0() * static_cast<std::size_t>(i);
    for (int t = 0; t < t_len; ++t)
      for (std::size_t p = 0; p < hw; ++p)
        for (int c = 0; c < 3; ++c)
          dst[(static_cast<std::size_t>(c) * t_len + t) * hw + p] = src[(static_cast<std::size_t>(t) * hw + p) * 3 + c];
  }
  return x;
}

std::vector<SightResult> SightModel::count_clips(std::span<const VideoClip> clips) {
  auto batch = model_.forward(to_input(clips), nn::Mode::eval);
  const int f = batch.features.dim(1);
  std::vector<SightResult> out;
  out.reserve(clips.size());
  for (std::size_t i = 0; i < clips.size(); ++i) {
    SightResult r;
    r.head = batch.heads[i];
    r.prediction = CountPrediction(r.head.count, Modality::sight);
    const double* fp = batch.features.data() + i * static_cast<std::size_t>(f);
    r.features.feature.assign(fp, fp + f);
    r.features.mid = batch.mid.sample(static_cast<int>(i));
    out.push_back(std::move(r));
  }
  return out;
}

SightResult SightModel::sight_count(const VideoClip& clip) { return count_clips(std::span(&clip, 1)).front(); }

VisualFeatures SightModel::extract_visual_features(const VideoClip& clip) { return sight_count(clip).features; }

VideoCount SightModel::video_count(const VideoSource& video, const SegmentFrames& segment, int stride,
                                   ClipAggregation aggregation) {
  const int t_len = config_.clip.clip_len;
  const long span = static_cast<long>(t_len) * stride;
  auto starts = tile_starts(segment, stride, t_len);
  if (aggregation == ClipAggregation::single_clip_extrapolation) starts.resize(1);

  constexpr std::size_t kBatch = 8;
  VideoCount out;
  double total = 0.0;
  for (std::size_t i = 0; i < starts.size(); i += kBatch) {
    std::vector<VideoClip> clips;
    for (std::size_t j = i; j < std::min(starts.size(), i + kBatch); ++j)
      clips.push_back(make_clip(video, segment, starts[j], stride, config_.clip));
    auto results = count_clips(clips);
    if (i == 0) out.first_clip = results.front().features;
    for (const auto& r : results) total += r.prediction.value();
  }
  out.clips = static_cast<int>(starts.size());
  const double covered = static_cast<double>(starts.size()) * static_cast<double>(span);
  const double length = static_cast<double>(segment.length());
  // A single padded clip already sees the whole segment.
  out.count = length > covered ? total * length / covered : total;
  return out;
}

}  // namespace avcount
