#include "avcount/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "avcount/errors.hpp"

namespace avcount {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double unit(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

double gauss(std::uint64_t key) {
  const double u1 = std::max(unit(mix(key)), 1e-300);
  const double u2 = unit(mix(key ^ 0xD1B54A32D192ED03ULL));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

struct Disk {
  double x0, y0, radius, drift_x, drift_y, rate, phase;
  std::array<float, 3> color;
};

struct Scene {
  SyntheticSpec spec;
  std::uint64_t seed = 0;
  std::vector<double> bounds;      // cycle boundaries in frames
  std::vector<double> amplitudes;  // relative amplitude at each boundary
  long num_frames = 0;
  std::array<float, 3> fg{}, bg{};
  double center_x = 0, center_y = 0, amplitude = 0, radius = 0, pulse = 0;
  std::vector<Disk> distractors;
  double occl_begin = 0, occl_end = 0;
  double drift_phase_x = 0, drift_phase_y = 0, scale_phase = 0;

  double phase(double t) const {
    if (t <= bounds.front()) return 0.0;
    if (t >= bounds.back()) return kTwoPi * static_cast<double>(bounds.size() - 1);
    const auto it = std::upper_bound(bounds.begin(), bounds.end(), t);
    const auto k = static_cast<std::size_t>(it - bounds.begin() - 1);
    return kTwoPi * (static_cast<double>(k) + (t - bounds[k]) / (bounds[k + 1] - bounds[k]));
  }

  double gain(double t) const {
    if (t <= bounds.front()) return amplitudes.front();
    if (t >= bounds.back()) return amplitudes.back();
    const auto it = std::upper_bound(bounds.begin(), bounds.end(), t);
    const auto k = static_cast<std::size_t>(it - bounds.begin() - 1);
    const double w = (t - bounds[k]) / (bounds[k + 1] - bounds[k]);
    return amplitudes[k] * (1.0 - w) + amplitudes[k + 1] * w;
  }

  /// Position along the motion axis (dot) or radius (blob).
  double trajectory(double t) const {
    const double c = std::cos(phase(t));
    if (spec.visual_pattern == VisualPattern::bouncing_dot) return center_y + amplitude * gain(t) * c;
    return radius + pulse * gain(t) * c;
  }

  double axis_center() const { return spec.visual_pattern == VisualPattern::bouncing_dot ? center_y : radius; }
};

void draw_disk(Frame& f, double cx, double cy, double r, const std::array<float, 3>& color) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - r - 1))),
            x1 = std::min(f.width - 1, static_cast<int>(std::ceil(cx + r + 1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - r - 1))),
            y1 = std::min(f.height - 1, static_cast<int>(std::ceil(cy + r + 1)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
      const auto a = static_cast<float>(std::clamp(r + 0.5 - d, 0.0, 1.0));
      if (a <= 0.0F) continue;
      for (int c = 0; c < 3; ++c) f.at(y, x, c) = f.at(y, x, c) * (1.0F - a) + color[static_cast<std::size_t>(c)] * a;
    }
}

class SyntheticVideoSource final : public VideoSource {
 public:
  explicit SyntheticVideoSource(std::shared_ptr<const Scene> scene) : scene_(std::move(scene)) {}
  long num_frames() const override { return scene_->num_frames; }
  double fps() const override { return scene_->spec.fps; }

  Frame frame(long index) const override {
    if (index < 0 || index >= scene_->num_frames) throw ArgumentError("frame index out of range");
    const Scene& s = *scene_;
    const int res = s.spec.resolution;
    const auto deg = s.spec.degradation;
    const double t = static_cast<double>(index);
    const double n = static_cast<double>(s.num_frames);
    Frame f{res, res, std::vector<float>(static_cast<std::size_t>(res) * res * 3)};
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x)
        for (int c = 0; c < 3; ++c) f.at(y, x, c) = s.bg[static_cast<std::size_t>(c)];

    double dx = 0.0, dy = 0.0, scale = 1.0;
    if (deg == ChallengeTag::camera_viewpoint_changes) {
      dx = 0.2 * res * std::sin(kTwoPi * 0.8 * t / n + s.drift_phase_x);
      dy = 0.15 * res * std::sin(kTwoPi * 0.6 * t / n + s.drift_phase_y);
    }
    if (deg == ChallengeTag::scale_variation) scale = 1.0 + 0.45 * std::sin(kTwoPi * t / n + s.scale_phase);

    for (const auto& d : s.distractors) {
      const double px = d.x0 + d.drift_x * std::sin(kTwoPi * t / (n * d.rate) + d.phase);
      const double py = d.y0 + d.drift_y * std::sin(kTwoPi * t / (n * d.rate) + d.phase + 1.0);
      draw_disk(f, px + dx, py + dy, d.radius, d.color);
    }

    const bool hidden = deg == ChallengeTag::disappearing_activity && t >= s.occl_begin && t < s.occl_end;
    if (!hidden) {
      if (s.spec.visual_pattern == VisualPattern::bouncing_dot)
        draw_disk(f, s.center_x + dx, s.trajectory(t) + dy, s.radius * scale, s.fg);
      else
        draw_disk(f, s.center_x + dx, s.center_y + dy, s.trajectory(t) * scale, s.fg);
    }

    double sigma = s.spec.noise_level;
    if (deg == ChallengeTag::low_illumination) {
      for (auto& v : f.rgb) v *= 0.25F;
      sigma += 0.04;
    }
    if (sigma > 0.0) {
      std::mt19937_64 rng(mix(s.seed ^ mix(static_cast<std::uint64_t>(index) + 0x51ED27ULL)));
      std::normal_distribution<double> noise(0.0, sigma);
      for (auto& v : f.rgb) v += static_cast<float>(noise(rng));
    }
    if (deg == ChallengeTag::low_resolution) {
      const int block = 4;
      for (int by = 0; by < res; by += block)
        for (int bx = 0; bx < res; bx += block)
          for (int c = 0; c < 3; ++c) {
            const int ye = std::min(res, by + block), xe = std::min(res, bx + block);
            double acc = 0.0;
            for (int y = by; y < ye; ++y)
              for (int x = bx; x < xe; ++x) acc += f.at(y, x, c);
            const auto mean = static_cast<float>(acc / ((ye - by) * (xe - bx)));
            for (int y = by; y < ye; ++y)
              for (int x = bx; x < xe; ++x) f.at(y, x, c) = mean;
          }
    }
    for (auto& v : f.rgb) v = std::clamp(v, 0.0F, 1.0F);
    return f;
  }

 private:
  std::shared_ptr<const Scene> scene_;
};

struct AudioScene {
  AudioPattern pattern = AudioPattern::click_train;
  int sample_rate = 16000;
  long total_samples = 0;
  double noise = 0.0;
  double tone_hz = 800.0;
  std::vector<double> events_s;
  std::vector<double> gains;
  std::uint64_t seed = 0;
};

constexpr double kClickTau = 0.006;
constexpr double kClickLength = 5 * kClickTau;
constexpr double kToneLength = 0.06;

class SyntheticAudioSource final : public AudioSource {
 public:
  explicit SyntheticAudioSource(std::shared_ptr<const AudioScene> scene) : scene_(std::move(scene)) {}
  int sample_rate() const override { return scene_->sample_rate; }
  double duration_s() const override { return static_cast<double>(scene_->total_samples) / scene_->sample_rate; }

  AudioWaveform slice(double start_s, double end_s) const override {
    const AudioScene& a = *scene_;
    const long i0 = std::clamp(static_cast<long>(std::llround(start_s * a.sample_rate)), 0L, a.total_samples);
    const long i1 = std::clamp(static_cast<long>(std::llround(end_s * a.sample_rate)), i0, a.total_samples);
    AudioWaveform w;
    w.sample_rate = a.sample_rate;
    w.samples.resize(static_cast<std::size_t>(i1 - i0));
    const double length = a.pattern == AudioPattern::click_train ? kClickLength : kToneLength;
    for (long i = i0; i < i1; ++i) {
      const double t = static_cast<double>(i) / a.sample_rate;
      double v = a.noise > 0.0 ? a.noise * gauss(a.seed ^ mix(static_cast<std::uint64_t>(i))) : 0.0;
      for (std::size_t e = 0; e < a.events_s.size(); ++e) {
        const double u = t - a.events_s[e];
        if (u < 0.0 || u >= length) continue;
        if (a.pattern == AudioPattern::click_train) {
          v += a.gains[e] * std::exp(-u / kClickTau) * gauss(mix(a.seed + 0xC11C) ^ mix(static_cast<std::uint64_t>(i)));
        } else {
          const double win = 0.5 - 0.5 * std::cos(kTwoPi * u / kToneLength);
          v += a.gains[e] * win * std::sin(kTwoPi * a.tone_hz * u);
        }
      }
      w.samples[static_cast<std::size_t>(i - i0)] = std::clamp(v, -1.0, 1.0);
    }
    return w;
  }

 private:
  std::shared_ptr<const AudioScene> scene_;
};

}  // namespace

std::string_view to_string(VisualPattern p) {
  return p == VisualPattern::bouncing_dot ? "bouncing_dot" : "oscillating_blob";
}

std::string_view to_string(AudioPattern p) { return p == AudioPattern::click_train ? "click_train" : "tone_burst"; }

void validate(const SyntheticSpec& s) {
  if (s.count < 2) throw ArgumentError("synthetic count must be >= 2");
  if (!(s.period_frames >= 2.0)) throw ArgumentError("synthetic period must be >= 2 frames");
  if (!(s.period_jitter >= 0.0 && s.period_jitter < 0.5)) throw ArgumentError("period_jitter must lie in [0, 0.5)");
  if (s.resolution < 4) throw ArgumentError("synthetic resolution must be >= 4");
  if (!(s.fps > 0.0) || s.sample_rate <= 0) throw ArgumentError("fps and sample_rate must be positive");
  if (s.noise_level < 0.0 || s.audio_noise < 0.0) throw ArgumentError("noise levels must be non-negative");
  if (s.lead_in_s < 0.0 || s.lead_out_s < 0.0) throw ArgumentError("lead times must be non-negative");
}

SyntheticVideo synth_generate(const SyntheticSpec& spec, std::uint64_t seed, std::string video_id, Split split) {
  validate(spec);
  std::mt19937_64 rng(mix(seed));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  auto scene = std::make_shared<Scene>();
  scene->spec = spec;
  scene->seed = mix(seed + 1);
  const double period = spec.degradation == ChallengeTag::fast_motion ? spec.period_frames * 0.5 : spec.period_frames;
  const double lead_in = spec.lead_in_s * spec.fps;
  scene->bounds.push_back(lead_in);
  for (int k = 0; k < spec.count; ++k)
    scene->bounds.push_back(scene->bounds.back() + period * (1.0 + spec.period_jitter * uniform(-1.0, 1.0)));
  for (int k = 0; k <= spec.count; ++k) scene->amplitudes.push_back(1.0 + 0.1 * uniform(-1.0, 1.0));
  scene->num_frames = static_cast<long>(std::ceil(scene->bounds.back() + spec.lead_out_s * spec.fps)) + 1;

  const double res = spec.resolution;
  for (auto& c : scene->fg) c = static_cast<float>(uniform(0.6, 1.0));
  for (auto& c : scene->bg) c = static_cast<float>(uniform(0.0, 0.25));
  scene->center_x = uniform(0.3, 0.7) * res;
  scene->center_y = 0.5 * res;
  if (spec.visual_pattern == VisualPattern::bouncing_dot) {
    scene->radius = 0.12 * res;
    scene->amplitude = 0.28 * res;
  } else {
    scene->radius = 0.22 * res;
    scene->pulse = 0.1 * res;
  }
  if (spec.degradation == ChallengeTag::cluttered_background) {
    for (int i = 0; i < 4; ++i) {
      Disk d{uniform(0.1, 0.9) * res, uniform(0.1, 0.9) * res, uniform(0.08, 0.16) * res, uniform(0.05, 0.2) * res,
             uniform(0.05, 0.2) * res, uniform(1.5, 3.0), uniform(0.0, kTwoPi), {}};
      for (auto& c : d.color) c = static_cast<float>(uniform(0.3, 1.0));
      scene->distractors.push_back(d);
    }
  }
  const double seg_len = scene->bounds.back() - scene->bounds.front();
  const double hidden = uniform(0.4, 0.6) * seg_len;
  scene->occl_begin = scene->bounds.front() + uniform(0.0, seg_len - hidden);
  scene->occl_end = scene->occl_begin + hidden;
  scene->drift_phase_x = uniform(0.0, kTwoPi);
  scene->drift_phase_y = uniform(0.0, kTwoPi);
  scene->scale_phase = uniform(0.0, kTwoPi);

  SyntheticVideo out;
  out.video = std::make_shared<SyntheticVideoSource>(scene);
  for (double b : scene->bounds) out.cycle_bounds_s.push_back(b / spec.fps);
  for (int k = 0; k < spec.count; ++k) out.event_times_s.push_back(0.5 * (out.cycle_bounds_s[static_cast<std::size_t>(k)] + out.cycle_bounds_s[static_cast<std::size_t>(k) + 1]));
  for (long i = 0; i < scene->num_frames; ++i) out.trajectory.push_back(scene->trajectory(static_cast<double>(i)));
  out.axis_center = scene->axis_center();

  auto audio = std::make_shared<AudioScene>();
  audio->pattern = spec.audio_pattern;
  audio->sample_rate = spec.sample_rate;
  audio->total_samples = static_cast<long>(std::llround(static_cast<double>(scene->num_frames) / spec.fps * spec.sample_rate));
  audio->noise = spec.audio_noise;
  audio->tone_hz = uniform(500.0, 1500.0);
  audio->events_s = out.event_times_s;
  for (int k = 0; k < spec.count; ++k) audio->gains.push_back(0.5 * (1.0 + 0.1 * uniform(-1.0, 1.0)));
  audio->seed = mix(seed + 2);
  if (spec.with_audio) out.audio = std::make_shared<SyntheticAudioSource>(audio);

  VideoRecord& r = out.record;
  r.video_id = std::move(video_id);
  r.media_path = "synthetic/" + r.video_id;
  if (spec.with_audio) r.audio_path = "synthetic/" + r.video_id + ".wav";
  r.split = split;
  r.count = CountLabel(static_cast<double>(spec.count));
  r.start_s = out.cycle_bounds_s.front();
  r.end_s = out.cycle_bounds_s.back();
  r.action_class = std::string(to_string(spec.visual_pattern)) + "+" + std::string(to_string(spec.audio_pattern));
  if (spec.degradation) r.challenge_tags.insert(*spec.degradation);
  r.fps = spec.fps;
  for (int k = 0; k < spec.count; ++k)
    r.repetition_bounds.emplace_back(out.cycle_bounds_s[static_cast<std::size_t>(k)], out.cycle_bounds_s[static_cast<std::size_t>(k) + 1]);
  return out;
}

void validate(const SyntheticDatasetConfig& c) {
  if (c.n_train < 0 || c.n_val < 0 || c.n_test < 0) throw ConfigError("split sizes must be non-negative");
  if (c.min_count < 2 || c.max_count < c.min_count) throw ConfigError("count range must satisfy 2 <= min <= max");
  if (!(c.min_period_frames >= 2.0) || c.max_period_frames < c.min_period_frames)
    throw ConfigError("period range must satisfy 2 <= min <= max");
  if (c.degraded_fraction < 0.0 || c.degraded_fraction > 1.0 || c.noisy_audio_fraction < 0.0 ||
      c.noisy_audio_fraction > 1.0)
    throw ConfigError("fractions must lie in [0, 1]");
}

void SyntheticMediaProvider::add(const SyntheticVideo& v) { media_[v.record.video_id] = {v.video, v.audio}; }

std::shared_ptr<const VideoSource> SyntheticMediaProvider::video(const VideoRecord& record) const {
  const auto it = media_.find(record.video_id);
  if (it == media_.end()) throw MediaError("no synthetic media for " + record.video_id);
  return it->second.first;
}

std::shared_ptr<const AudioSource> SyntheticMediaProvider::audio(const VideoRecord& record) const {
  const auto it = media_.find(record.video_id);
  if (it == media_.end()) throw MediaError("no synthetic media for " + record.video_id);
  return it->second.second;
}

SyntheticDataset synth_dataset(const SyntheticDatasetConfig& config) {
  validate(config);
  SyntheticDataset out;
  auto provider = std::make_shared<SyntheticMediaProvider>();
  const int total = config.n_train + config.n_val + config.n_test;
  for (int i = 0; i < total; ++i) {
    const Split split = i < config.n_train ? Split::train : (i < config.n_train + config.n_val ? Split::val : Split::test);
    std::mt19937_64 rng(mix(config.seed * 1000003ULL + static_cast<std::uint64_t>(i)));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    SyntheticSpec s;
    s.count = std::uniform_int_distribution<int>(config.min_count, config.max_count)(rng);
    s.period_frames = config.min_period_frames + (config.max_period_frames - config.min_period_frames) * u01(rng);
    s.period_jitter = config.period_jitter;
    s.visual_pattern = u01(rng) < 0.5 ? VisualPattern::bouncing_dot : VisualPattern::oscillating_blob;
    s.audio_pattern = u01(rng) < 0.5 ? AudioPattern::click_train : AudioPattern::tone_burst;
    s.noise_level = config.visual_noise;
    s.audio_noise = u01(rng) < config.noisy_audio_fraction ? config.noisy_audio_noise : config.audio_noise;
    if (u01(rng) < config.degraded_fraction)
      s.degradation = kAllChallengeTags[std::uniform_int_distribution<std::size_t>(0, kAllChallengeTags.size() - 1)(rng)];
    s.resolution = config.resolution;
    s.fps = config.fps;
    s.sample_rate = config.sample_rate;
    char id[32];
    std::snprintf(id, sizeof id, "syn_%05d", i);
    const auto video = synth_generate(s, rng(), id, split);
    provider->add(video);
    out.dataset.manifest.records.push_back(video.record);
    out.specs[id] = s;
  }
  out.dataset.media = provider;
  return out;
}

std::filesystem::path materialize(const Dataset& dataset, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "frames");
  fs::create_directories(dir / "audio");
  DatasetManifest manifest;
  manifest.base_dir = dir;
  for (const auto& rec : dataset.manifest.records) {
    VideoRecord r = rec;
    const auto video = dataset.media->video(rec);
    const fs::path frame_dir = fs::path("frames") / r.video_id;
    fs::create_directories(dir / frame_dir);
    char name[32];
    for (long i = 0; i < video->num_frames(); ++i) {
      std::snprintf(name, sizeof name, "%06ld.ppm", i);
      write_ppm(dir / frame_dir / name, video->frame(i));
    }
    r.media_path = frame_dir;
    r.audio_path.reset();
    if (const auto audio = dataset.media->audio(rec)) {
      const fs::path wav = fs::path("audio") / (r.video_id + ".wav");
      write_wav(dir / wav, audio->slice(0.0, audio->duration_s()));
      r.audio_path = wav;
    }
    manifest.records.push_back(std::move(r));
  }
  const fs::path path = dir / "manifest.jsonl";
  save_manifest(path, manifest);
  return path;
}

}  // namespace avcount
