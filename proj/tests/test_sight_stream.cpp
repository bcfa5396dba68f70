#include <gtest/gtest.h>

#include <random>

#include "avcount/errors.hpp"
#include "avcount/sight_stream.hpp"
#include "test_support.hpp"

using namespace avcount;

namespace {

SightConfig tiny_sight() {
  SightConfig c;
  c.clip = {8, 16};
  c.backbone.variant = BackboneVariant::tiny;
  c.backbone.tiny_widths = {4, 4, 8};
  c.backbone.feature_dim = 8;
  c.head = HeadConfig{8, 2};
  return c;
}

FrameArraySource noise_video(long frames, std::mt19937_64& rng, int size = 16) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<Frame> out;
  for (long i = 0; i < frames; ++i) {
    Frame f{size, size, std::vector<float>(static_cast<std::size_t>(size) * size * 3)};
    for (auto& v : f.rgb) v = u(rng);
    out.push_back(std::move(f));
  }
  return FrameArraySource(std::move(out), 25.0);
}

void constant_head(SightModel& model, double per_clip) {
  model.stream().zero_parameters();
  auto& bias = model.stream().head().count_branch().bias().value;
  for (auto& v : bias.storage()) v = per_clip;
}

}  // namespace

TEST(SightIndices, SegmentFrames) {
  const SegmentFrames s = segment_frames(1.0, 3.0, 25.0, 1000);
  EXPECT_EQ(s.begin, 25);
  EXPECT_EQ(s.end, 75);
  EXPECT_EQ(segment_frames(1.0, 100.0, 25.0, 60).end, 60);
  EXPECT_THROW(segment_frames(2.0, 2.0, 25.0, 100), DomainError);
  EXPECT_THROW(segment_frames(0.0, 0.01, 25.0, 100), DomainError);
}

TEST(SightIndices, ClipFrameIndicesClampAtEnd) {
  EXPECT_EQ(clip_frame_indices(10, 3, 4, 100), (std::vector<long>{10, 13, 16, 19}));
  EXPECT_EQ(clip_frame_indices(10, 3, 4, 15), (std::vector<long>{10, 13, 15, 15}));
  EXPECT_THROW(clip_frame_indices(0, 0, 4, 10), ArgumentError);
}

TEST(SightIndices, ResampleIndices) {
  EXPECT_EQ(resample_indices(2, 9, 3), (std::vector<long>{2, 5, 8}));
  EXPECT_TRUE(resample_indices(5, 5, 1).empty());
}

TEST(SightIndices, TileStartsAreNonOverlappingAndNonEmpty) {
  EXPECT_EQ(tile_starts({10, 60}, 2, 8), (std::vector<long>{10, 26, 42}));
  EXPECT_EQ(tile_starts({0, 5}, 4, 8), (std::vector<long>{0}));
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const long begin = static_cast<long>(rng() % 50), len = 1 + static_cast<long>(rng() % 500);
    const int stride = 1 + static_cast<int>(rng() % 8), t = 1 + static_cast<int>(rng() % 64);
    const auto starts = tile_starts({begin, begin + len}, stride, t);
    ASSERT_FALSE(starts.empty());
    for (std::size_t i = 1; i < starts.size(); ++i) EXPECT_EQ(starts[i] - starts[i - 1], static_cast<long>(t) * stride);
    if (starts.size() > 1) EXPECT_LE(starts.back() + static_cast<long>(t) * stride, begin + len);
  }
}

TEST(SightClip, MakeClipShapeAndValues) {
  std::mt19937_64 rng(1);
  const auto video = noise_video(40, rng, 32);
  const VideoClip clip = make_clip(video, {5, 30}, 5, 4, {8, 16});
  EXPECT_EQ(clip.frames.shape(), (Tensor::Shape{8, 16, 16, 3}));
  EXPECT_EQ(clip.stride, 4);
  // Index 5 + 7 * 4 = 33 is clamped to frame 29; its resized copy must match.
  const Frame last = resize_frame(video.frame(29), 16, 16);
  const std::size_t plane = 16 * 16 * 3;
  for (std::size_t i = 0; i < plane; ++i) EXPECT_FLOAT_EQ(static_cast<float>(clip.frames[7 * plane + i]), last.rgb[i]);
  EXPECT_THROW(make_clip(video, {5, 30}, 31, 1, {8, 16}), ArgumentError);
}

TEST(SightModel, ZeroClipZeroInitGivesZeroFeature) {
  std::mt19937_64 rng(2);
  SightModel model(tiny_sight(), rng);
  model.stream().zero_parameters();
  VideoClip clip{Tensor({8, 16, 16, 3}), 1, 0, 7};
  const SightResult r = model.sight_count(clip);
  for (double v : r.features.feature) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(r.prediction.value(), 0.0);
}

TEST(SightModel, DeterministicAndShapes) {
  std::mt19937_64 rng(4);
  SightModel model(tiny_sight(), rng);
  const auto video = noise_video(30, rng);
  const VideoClip clip = make_clip(video, {0, 30}, 0, 2, model.config().clip);
  const SightResult a = model.sight_count(clip), b = model.sight_count(clip);
  EXPECT_EQ(a.features.feature, b.features.feature);
  EXPECT_EQ(a.prediction.value(), b.prediction.value());
  EXPECT_EQ(a.features.feature.size(), 8u);
  EXPECT_EQ(a.features.mid.dim(0), 1);
  EXPECT_EQ(a.features.mid.dim(1), sight_tap_channels(model.config().backbone));
  EXPECT_GE(a.prediction.value(), 0.0);
}

TEST(SightModel, RejectsWrongClipShape) {
  std::mt19937_64 rng(5);
  SightModel model(tiny_sight(), rng);
  VideoClip clip{Tensor({4, 16, 16, 3}), 1, 0, 3};
  EXPECT_THROW(model.sight_count(clip), ArgumentError);
}

TEST(SightModel, SingleClassHeadPredictionIsClampedScalar) {
  SightConfig cfg = tiny_sight();
  cfg.head.num_classes = 1;
  std::mt19937_64 rng(6);
  SightModel model(cfg, rng);
  constant_head(model, -2.0);
  VideoClip clip{Tensor({8, 16, 16, 3}), 1, 0, 7};
  const SightResult r = model.sight_count(clip);
  EXPECT_DOUBLE_EQ(r.head.count, -2.0);
  EXPECT_DOUBLE_EQ(r.prediction.value(), 0.0);
}

TEST(SightModel, VideoCountSumsAndScalesByCoverage) {
  std::mt19937_64 rng(7);
  SightModel model(tiny_sight(), rng);
  constant_head(model, 1.5);
  const auto video = noise_video(70, rng);
  const SegmentFrames seg{10, 60};  // 50 frames; stride 2 x 8 frames = 16 per clip, 3 clips
  const VideoCount sum = model.video_count(video, seg, 2);
  EXPECT_EQ(sum.clips, 3);
  EXPECT_NEAR(sum.count, 3 * 1.5 * 50.0 / 48.0, 1e-9);
  const VideoCount single = model.video_count(video, seg, 2, ClipAggregation::single_clip_extrapolation);
  EXPECT_EQ(single.clips, 1);
  EXPECT_NEAR(single.count, 1.5 * 50.0 / 16.0, 1e-9);
  // Segment shorter than one clip: one padded clip, no scaling.
  EXPECT_NEAR(model.video_count(video, {0, 10}, 4).count, 1.5, 1e-9);
}

TEST(SightModel, SaveLoadRoundTrip) {
  avtest::TempDir dir("sight");
  std::mt19937_64 rng(8);
  SightModel a(tiny_sight(), rng), b(tiny_sight(), rng);
  a.save(dir.path() / "s.bin");
  b.load(dir.path() / "s.bin");
  const auto video = noise_video(20, rng);
  const VideoClip clip = make_clip(video, {0, 20}, 0, 1, a.config().clip);
  EXPECT_EQ(a.sight_count(clip).prediction.value(), b.sight_count(clip).prediction.value());
}

TEST(SightBackbone, FullVariantShape) {
  SightBackboneConfig cfg;
  cfg.variant = BackboneVariant::full;
  cfg.feature_dim = 16;
  Backbone bb = make_sight_backbone(cfg);
  std::mt19937_64 rng(9);
  bb.reset_parameters(rng);
  const auto out = bb.forward(avtest::random_tensor({1, 3, 8, 32, 32}, rng), nn::Mode::eval);
  EXPECT_EQ(out.feature.shape(), (Tensor::Shape{1, 16}));
  EXPECT_EQ(out.mid.dim(1), sight_tap_channels(cfg));
}
