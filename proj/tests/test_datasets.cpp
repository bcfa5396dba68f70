#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "avcount/datasets.hpp"
#include "avcount/errors.hpp"
#include "avcount/synthetic.hpp"
#include "test_support.hpp"

using namespace avcount;

namespace {

std::string record_line(const std::string& id, const std::string& split, double count = 4.0, double start = 1.0,
                        double end = 5.0) {
  std::ostringstream s;
  s << R"({"video_id":")" << id << R"(","media_path":"v/)" << id << R"(.mp4","split":")" << split
    << R"(","count":)" << count << R"(,"segment":[)" << start << "," << end << "]}";
  return s.str();
}

std::size_t parse_error_line(const std::string& text) {
  std::istringstream in(text);
  try {
    parse_manifest(in);
  } catch (const ParseError& e) {
    return e.line();
  }
  return 0;
}

// Repetitions of the ground-truth cycles that fall inside [lo, hi) frames.
double true_reps_in_window(const SyntheticVideo& v, double lo, double hi, double fps) {
  double reps = 0.0;
  for (std::size_t k = 0; k + 1 < v.cycle_bounds_s.size(); ++k) {
    const double a = v.cycle_bounds_s[k] * fps, b = v.cycle_bounds_s[k + 1] * fps;
    reps += std::max(0.0, std::min(b, hi) - std::max(a, lo)) / (b - a);
  }
  return reps;
}

}  // namespace

TEST(Manifest, ParsesRecordsAndOptionalFields) {
  std::istringstream in(
      "# comment\n\n" + record_line("a", "train") + "\n" +
      R"({"video_id":"b","media_path":"b","audio_path":"b.wav","split":"validation","count":7,"segment":[0,3],)"
      R"("action_class":"jumping jacks","challenge_tags":["fast_motion","low_illumination"],"fps":30,)"
      R"("repetition_bounds":[[0,1],[1,3]]})" "\n");
  const DatasetManifest m = parse_manifest(in);
  ASSERT_EQ(m.records.size(), 2u);
  const VideoRecord& b = *m.find("b");
  EXPECT_EQ(b.split, Split::val);
  EXPECT_EQ(b.audio_path->string(), "b.wav");
  EXPECT_EQ(b.action_class.value(), "jumping jacks");
  EXPECT_EQ(b.challenge_tags, (TagSet{ChallengeTag::fast_motion, ChallengeTag::low_illumination}));
  EXPECT_DOUBLE_EQ(b.fps, 30.0);
  EXPECT_DOUBLE_EQ(b.mean_period_frames(), 45.0);
  EXPECT_DOUBLE_EQ(m.find("a")->mean_period_frames(), 25.0);
  EXPECT_EQ(m.find("zzz"), nullptr);
}

TEST(Manifest, ErrorsCarryLineNumbers) {
  EXPECT_EQ(parse_error_line(record_line("a", "train") + "\n{not json\n"), 2u);
  EXPECT_EQ(parse_error_line(record_line("a", "train") + "\n\n" + record_line("a", "val") + "\n"), 3u);
  EXPECT_EQ(parse_error_line(record_line("a", "train", 4.0, 3.0, 3.0) + "\n"), 1u);
  EXPECT_EQ(parse_error_line(record_line("a", "train", 0.0) + "\n"), 1u);
  EXPECT_EQ(parse_error_line(record_line("a", "holdout") + "\n"), 1u);
  EXPECT_EQ(parse_error_line(R"({"video_id":"a","split":"train","count":2,"segment":[0,1]})"), 1u);
}

TEST(Manifest, EmptyFileGivesEmptyManifest) {
  std::istringstream in("");
  EXPECT_TRUE(parse_manifest(in).records.empty());
  EXPECT_THROW(load_manifest("/nonexistent/manifest.jsonl"), DependencyError);
}

TEST(Manifest, SplitCounts) {
  std::ostringstream text;
  int id = 0;
  for (auto [split, n] : {std::pair{"train", 987}, {"val", 311}, {"test", 565}})
    for (int i = 0; i < n; ++i) text << record_line("v" + std::to_string(id++), split) << '\n';
  std::istringstream in(text.str());
  const auto counts = parse_manifest(in).split_counts();
  EXPECT_EQ(counts.at(Split::train), 987u);
  EXPECT_EQ(counts.at(Split::val), 311u);
  EXPECT_EQ(counts.at(Split::test), 565u);
}

TEST(Manifest, RoundTripIsIdentity) {
  const auto syn = synth_dataset({.n_train = 6, .n_val = 3, .n_test = 2});
  avtest::TempDir dir("manifest");
  save_manifest(dir.path() / "m.jsonl", syn.dataset.manifest);
  const auto back = load_manifest(dir.path() / "m.jsonl");
  ASSERT_EQ(back.records.size(), syn.dataset.manifest.records.size());
  for (std::size_t i = 0; i < back.records.size(); ++i)
    EXPECT_EQ(serialize_record(back.records[i]), serialize_record(syn.dataset.manifest.records[i]));
  save_manifest(dir.path() / "m2.jsonl", back);
  std::ifstream a(dir.path() / "m.jsonl"), b(dir.path() / "m2.jsonl");
  EXPECT_EQ(std::string(std::istreambuf_iterator<char>(a), {}), std::string(std::istreambuf_iterator<char>(b), {}));
}

TEST(Synthetic, DeterministicInSpecAndSeed) {
  SyntheticSpec spec;
  spec.degradation = ChallengeTag::cluttered_background;
  const auto a = synth_generate(spec, 11), b = synth_generate(spec, 11), c = synth_generate(spec, 12);
  ASSERT_EQ(a.video->num_frames(), b.video->num_frames());
  for (long i = 0; i < a.video->num_frames(); i += 7) EXPECT_EQ(a.video->frame(i).rgb, b.video->frame(i).rgb);
  EXPECT_EQ(a.audio->slice(0, 10).samples, b.audio->slice(0, 10).samples);
  EXPECT_NE(a.video->frame(3).rgb, c.video->frame(3).rgb);
}

TEST(Synthetic, BouncingDotCrossesMeanTwicePerCycle) {
  SyntheticSpec spec;
  spec.count = 5;
  spec.visual_pattern = VisualPattern::bouncing_dot;
  const auto v = synth_generate(spec, 3);
  int crossings = 0;
  for (std::size_t i = 1; i < v.trajectory.size(); ++i) {
    const double a = v.trajectory[i - 1] - v.axis_center, b = v.trajectory[i] - v.axis_center;
    if ((a > 0) != (b > 0)) ++crossings;
  }
  EXPECT_EQ(crossings, 10);
  EXPECT_EQ(v.record.count.value(), 5.0);
  EXPECT_EQ(v.cycle_bounds_s.size(), 6u);
}

TEST(Synthetic, ClickTrainHasOneEnergyPeakPerRepetition) {
  SyntheticSpec spec;
  spec.count = 8;
  spec.audio_pattern = AudioPattern::click_train;
  const auto v = synth_generate(spec, 5);
  const auto w = v.audio->slice(0.0, v.audio->duration_s());
  // Envelope: RMS over 10 ms frames.
  const int hop = w.sample_rate / 100;
  std::vector<double> env;
  for (std::size_t i = 0; i + hop <= w.samples.size(); i += hop) {
    double e = 0.0;
    for (int k = 0; k < hop; ++k) e += w.samples[i + k] * w.samples[i + k];
    env.push_back(std::sqrt(e / hop));
  }
  const double peak = *std::max_element(env.begin(), env.end());
  int peaks = 0;
  bool above = false;
  for (double e : env) {
    if (!above && e > 0.5 * peak) {
      ++peaks;
      above = true;
    } else if (above && e < 0.25 * peak) {
      above = false;
    }
  }
  EXPECT_EQ(peaks, 8);
  ASSERT_EQ(v.event_times_s.size(), 8u);
}

TEST(Synthetic, ScaledLabelWithinOnePeriodOfTruth) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 40; ++trial) {
    SyntheticSpec spec;
    spec.count = 2 + static_cast<int>(rng() % 7);
    spec.period_frames = 16.0 + static_cast<double>(rng() % 57);
    spec.period_jitter = 0.05;
    spec.with_audio = false;
    const auto v = synth_generate(spec, rng());
    const SegmentFrames seg = record_segment(v.record, *v.video);
    for (int stride = 1; stride <= 8; ++stride) {
      std::mt19937_64 offsets(rng());
      const long span = 64L * stride;
      const long last = std::max(seg.begin, seg.end - span);
      const long start = std::uniform_int_distribution<long>(seg.begin, last)(offsets);
      const double label = scaled_clip_label(v.record, seg, start, stride, 64);
      const double truth = true_reps_in_window(v, std::max<double>(start, seg.begin),
                                               std::min<double>(start + span, seg.end), spec.fps);
      EXPECT_LE(std::abs(label - truth), 1.0) << "stride " << stride;
    }
  }
}

TEST(Dataset, ScaledLabelProportionality) {
  VideoRecord r;
  r.count = CountLabel(6.0);
  const SegmentFrames seg{100, 300};
  EXPECT_DOUBLE_EQ(scaled_clip_label(r, seg, 100, 4, 64), 6.0);
  EXPECT_DOUBLE_EQ(scaled_clip_label(r, seg, 100, 1, 100), 3.0);
  EXPECT_DOUBLE_EQ(scaled_clip_label(r, seg, 299, 1, 1), 0.1);  // floored
}

TEST(Dataset, ClipSamplerKeepsSpanInsideSegment) {
  SyntheticSpec spec;
  spec.count = 6;
  spec.period_frames = 30;
  spec.with_audio = false;
  const auto v = synth_generate(spec, 1);
  const SegmentFrames seg = record_segment(v.record, *v.video);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto s = clip_sampler(v.record, *v.video, 2, {16, 16}, rng);
    EXPECT_GE(s.clip.start_frame, seg.begin);
    EXPECT_LE(s.clip.start_frame + 32, seg.end);
    EXPECT_NEAR(s.label.value(), 6.0 * 32 / static_cast<double>(seg.length()), 1e-12);
  }
  EXPECT_THROW(clip_sampler(v.record, *v.video, 0, {16, 16}, rng), ArgumentError);
}

TEST(Dataset, SyntheticConfigShape) {
  const auto syn = synth_dataset({.n_train = 20, .n_val = 10});
  const auto counts = syn.dataset.manifest.split_counts();
  EXPECT_EQ(counts.at(Split::train), 20u);
  EXPECT_EQ(counts.at(Split::val), 10u);
  for (const auto& r : syn.dataset.manifest.records) {
    EXPECT_GE(r.count.value(), 2.0);
    EXPECT_LE(r.count.value(), 8.0);
    EXPECT_NE(syn.dataset.media->video(r), nullptr);
  }
}

TEST(Dataset, MaterializedMediaReadsBack) {
  SyntheticDatasetConfig cfg{.n_train = 2, .n_val = 1};
  cfg.noisy_audio_fraction = 0.0;
  const auto syn = synth_dataset(cfg);
  avtest::TempDir dir("materialize");
  const auto manifest_path = materialize(syn.dataset, dir.path());
  const auto manifest = load_manifest(manifest_path);
  ASSERT_EQ(manifest.records.size(), 3u);
  FileMediaProvider files(manifest.base_dir, dir.path() / "work");
  for (const auto& r : manifest.records) {
    const auto& orig = *syn.dataset.manifest.find(r.video_id);
    const auto a = syn.dataset.media->video(orig), b = files.video(r);
    ASSERT_EQ(a->num_frames(), b->num_frames());
    for (long i = 0; i < a->num_frames(); i += 11) {
      const Frame fa = a->frame(i), fb = b->frame(i);
      for (std::size_t k = 0; k < fa.rgb.size(); ++k) EXPECT_NEAR(fa.rgb[k], fb.rgb[k], 0.5 / 255.0 + 1e-6);
    }
    const auto wa = syn.dataset.media->audio(orig)->slice(0, 100), wb = files.audio(r)->slice(0, 100);
    ASSERT_EQ(wa.samples.size(), wb.samples.size());
    for (std::size_t k = 0; k < wa.samples.size(); k += 97)
      EXPECT_NEAR(std::clamp(wa.samples[k], -1.0, 1.0), wb.samples[k], 1.0 / 32767.0 + 1e-9);
  }
  VideoRecord missing = manifest.records.front();
  missing.media_path = "does/not/exist";
  EXPECT_THROW(files.video(missing), MediaError);
}
