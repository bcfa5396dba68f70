#include "avcount/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <spdlog/spdlog.h>

#include "avcount/errors.hpp"

namespace avcount {

using json = nlohmann::json;
namespace fs = std::filesystem;

ArtifactPaths::ArtifactPaths(const fs::path& dir)
    : sight(dir / "sight.bin"),
      sound(dir / "sound.bin"),
      stride(dir / "stride.bin"),
      gate(dir / "gate.bin"),
      mining(dir / "mining.jsonl"),
      empirical(dir / "empirical.jsonl"),
      sight_epochs(dir / "sight_epochs.json"),
      sound_epochs(dir / "sound_epochs.json") {}

json RunRecord::to_json() const {
  json epochs_json = json::array();
  for (const auto& e : epochs) {
    json j{{"epoch", e.epoch}, {"train_loss", e.train_loss}};
    j["val_relative_mae"] = e.val_relative_mae ? json(*e.val_relative_mae) : json(nullptr);
    epochs_json.push_back(j);
  }
  return {{"stage", std::string(avcount::to_string(stage))},
          {"config", config},
          {"epochs", epochs_json},
          {"artifacts", artifacts},
          {"skipped", skipped},
          {"notes", notes}};
}

void RunRecord::save(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DependencyError("cannot write run record " + path.string());
  out << to_json().dump(2) << '\n';
}

namespace {

std::uint64_t derive(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed * 0x9E3779B97F4A7C15ULL + salt;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

enum Salt : std::uint64_t { kSightInit = 1, kSoundInit, kStrideInit, kGateInit, kShuffle, kClips, kNegatives, kNormClips };

// Train-mode batches used to re-estimate normalization statistics after each epoch.
constexpr std::size_t kNormBatches = 16;

double relative_mae(const std::vector<double>& preds, const std::vector<double>& labels) {
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) sum += std::abs(std::max(preds[i], 0.0) - labels[i]) / labels[i];
  return preds.empty() ? std::nan("") : sum / static_cast<double>(preds.size());
}

void check_finite(double loss, const char* stage, int epoch) {
  if (!std::isfinite(loss))
    throw DomainError(std::string(stage) + " training diverged in epoch " + std::to_string(epoch) +
                      "; lower the learning rate or enable gradient clipping");
}

std::vector<std::size_t> shuffled(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

struct SightItem {
  const VideoRecord* record = nullptr;
  std::shared_ptr<const VideoSource> video;
  SegmentFrames segment;
  int stride = 1;
};

std::vector<SightItem> sight_items(const Dataset& d, Split split, const RunConfig& c, RunRecord& rec) {
  std::vector<SightItem> items;
  for (const VideoRecord* r : d.manifest.split(split)) {
    const auto s = positive_stride(*r, c);
    if (!s) {
      spdlog::warn("{}: no stride up to {} covers two repetitions; skipped", r->video_id, c.stride.s_k_train);
      rec.skipped.push_back(r->video_id + ": no covering stride");
      continue;
    }
    SightItem it;
    it.record = r;
    it.video = d.media->video(*r);
    it.segment = record_segment(*r, *it.video);
    it.stride = *s;
    items.push_back(std::move(it));
  }
  return items;
}

std::map<std::string, double> sight_video_predictions(const std::vector<SightItem>& items, SightModel& sight,
                                                      ClipAggregation aggregation) {
  std::map<std::string, double> out;
  for (const auto& it : items)
    out[it.record->video_id] = sight.video_count(*it.video, it.segment, it.stride, aggregation).count;
  return out;
}

double relative_mae_of(const std::map<std::string, double>& preds, const std::vector<const VideoRecord*>& records) {
  std::vector<double> p, l;
  for (const VideoRecord* r : records) {
    const auto it = preds.find(r->video_id);
    if (it == preds.end()) continue;
    p.push_back(it->second);
    l.push_back(r->count.value());
  }
  return relative_mae(p, l);
}

template <typename Item>
std::vector<const VideoRecord*> records_of(const std::vector<Item>& items) {
  std::vector<const VideoRecord*> out;
  for (const auto& it : items) out.push_back(it.record);
  return out;
}

std::vector<int> action_labels(const std::vector<const VideoRecord*>& batch, const HeadConfig& head,
                               std::map<std::string, int>& index) {
  std::vector<int> labels;
  if (head.supervision != Supervision::action_class_ce) return labels;
  for (const VideoRecord* r : batch) {
    if (!r->action_class) throw ConfigError("action_class_ce supervision needs action_class on " + r->video_id);
    auto [it, inserted] = index.emplace(*r->action_class, static_cast<int>(index.size()));
    if (it->second >= head.num_classes)
      throw ConfigError("more action classes than num_classes (" + std::to_string(head.num_classes) + ")");
    labels.push_back(it->second);
  }
  return labels;
}

void save_epochs(const fs::path& path, const std::vector<EpochPredictions>& epochs,
                 const std::map<std::string, double>& final_predictions) {
  json j;
  j["epochs"] = json::array();
  for (const auto& e : epochs)
    j["epochs"].push_back({{"val_relative_mae", e.val_relative_mae}, {"train_predictions", e.train_predictions}});
  j["final_predictions"] = final_predictions;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DependencyError("cannot write " + path.string());
  out << j.dump() << '\n';
}

std::pair<std::vector<EpochPredictions>, std::map<std::string, double>> load_epochs(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError("missing stream epoch predictions " + path.string());
  try {
    const json j = json::parse(in);
    std::vector<EpochPredictions> epochs;
    for (const auto& e : j.at("epochs"))
      epochs.push_back({e.at("val_relative_mae").get<double>(),
                        e.at("train_predictions").get<std::map<std::string, double>>()});
    return {epochs, j.at("final_predictions").get<std::map<std::string, double>>()};
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what(), 1);
  }
}

/// Builds the empirical table once both streams have recorded their epochs.
void refresh_empirical_table(const RunConfig& c, RunRecord& rec) {
  const ArtifactPaths paths(c.weights_dir);
  if (!fs::exists(paths.sight_epochs) || !fs::exists(paths.sound_epochs)) return;
  const auto [v_epochs, v_final] = load_epochs(paths.sight_epochs);
  const auto [a_epochs, a_final] = load_epochs(paths.sound_epochs);
  const auto table = collect_empirical_predictions(v_epochs, v_final, a_epochs, a_final, c.reliability);
  save_empirical_table(paths.empirical, table);
  rec.artifacts["empirical"] = paths.empirical.string();
}

void log_epoch(const char* stage, const EpochLog& e) {
  if (e.val_relative_mae)
    spdlog::info("{} epoch {}: train loss {:.4f}, val relative MAE {:.4f}", stage, e.epoch, e.train_loss,
                 *e.val_relative_mae);
  else
    spdlog::info("{} epoch {}: train loss {:.4f}", stage, e.epoch, e.train_loss);
}

RunRecord train_sight(const RunConfig& c, const Dataset& d, RunRecord rec) {
  const ArtifactPaths paths(c.weights_dir);
  std::mt19937_64 init_rng(derive(c.seed, kSightInit)), shuffle_rng(derive(c.seed, kShuffle)),
      clip_rng(derive(c.seed, kClips));
  SightModel sight(c.sight, init_rng);
  const auto train = sight_items(d, Split::train, c, rec);
  const auto val = sight_items(d, Split::val, c, rec);
  if (train.empty()) throw DomainError("no usable training videos for the sight stream");
  nn::Sgd opt(sight.stream().params(), c.sight_schedule.sgd);
  std::map<std::string, int> action_index;
  std::vector<EpochPredictions> history;
  const auto bs = static_cast<std::size_t>(c.sight_schedule.batch_size);

  for (int epoch = 1; epoch <= c.sight_schedule.epochs; ++epoch) {
    const bool frozen = c.sight_schedule.frozen_norm(epoch);
    if (frozen && !c.sight_schedule.frozen_norm(epoch - 1))
      opt.set_learning_rate(c.sight_schedule.sgd.learning_rate * c.sight_schedule.frozen_norm_lr_scale);
    const nn::Mode mode = frozen ? nn::Mode::eval : nn::Mode::train;
    const auto order = shuffled(train.size(), shuffle_rng);
    double total = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b < order.size(); b += bs) {
      std::vector<VideoClip> clips;
      std::vector<CountLabel> labels;
      std::vector<const VideoRecord*> recs;
      for (std::size_t k = b; k < std::min(order.size(), b + bs); ++k) {
        const auto& it = train[order[k]];
        auto sample = clip_sampler(*it.record, *it.video, it.stride, c.sight.clip, clip_rng);
        clips.push_back(std::move(sample.clip));
        labels.push_back(sample.label);
        recs.push_back(it.record);
      }
      const auto actions = action_labels(recs, c.sight.head, action_index);
      auto batch = sight.stream().forward(sight.to_input(clips), mode);
      std::vector<double> counts;
      for (const auto& h : batch.heads) counts.push_back(h.count);
      const LossGrad lg = counting_loss(counts, labels, stack_class_dists(batch.heads), c.sight.head, actions);
      check_finite(lg.value, "sight", epoch);
      opt.zero_grad();
      sight.stream().backward(lg);
      opt.step();
      total += lg.value;
      ++batches;
    }
    std::mt19937_64 norm_rng(derive(c.seed + static_cast<std::uint64_t>(epoch), kNormClips));
    if (!frozen) sight.stream().estimate_batch_norm([&] {
      const auto pick = shuffled(train.size(), norm_rng);
      for (std::size_t b = 0; b < pick.size() && b < kNormBatches * bs; b += bs) {
        std::vector<VideoClip> clips;
        for (std::size_t k = b; k < std::min(pick.size(), b + bs); ++k) {
          const auto& it = train[pick[k]];
          clips.push_back(clip_sampler(*it.record, *it.video, it.stride, c.sight.clip, norm_rng).clip);
        }
        sight.stream().forward(sight.to_input(clips), nn::Mode::train);
      }
    });
    EpochLog log{epoch, total / batches, std::nullopt};
    if (!val.empty()) {
      log.val_relative_mae = relative_mae_of(sight_video_predictions(val, sight, c.aggregation), records_of(val));
      if (*log.val_relative_mae < c.reliability.theta_r_v)
        history.push_back({*log.val_relative_mae, sight_video_predictions(train, sight, c.aggregation)});
    }
    log_epoch("sight", log);
    rec.epochs.push_back(log);
  }
  sight.save(paths.sight);
  save_epochs(paths.sight_epochs, history, sight_video_predictions(train, sight, c.aggregation));
  rec.artifacts["sight_weights"] = paths.sight.string();
  rec.artifacts["sight_epochs"] = paths.sight_epochs.string();
  refresh_empirical_table(c, rec);
  return rec;
}

struct SoundItem {
  const VideoRecord* record = nullptr;
  std::vector<Spectrogram> segments;
};

std::vector<SoundItem> sound_items(const Dataset& d, Split split, const SoundModel& sound, RunRecord& rec) {
  std::vector<SoundItem> items;
  for (const VideoRecord* r : d.manifest.split(split)) {
    const auto audio = d.media->audio(*r);
    if (!audio) {
      rec.skipped.push_back(r->video_id + ": no audio");
      continue;
    }
    items.push_back({r, sound.segments(*audio, r->start_s, r->end_s)});
  }
  return items;
}

std::map<std::string, double> sound_video_predictions(const std::vector<SoundItem>& items, SoundModel& sound) {
  std::map<std::string, double> out;
  for (const auto& it : items) out[it.record->video_id] = sound.sound_count(it.segments).prediction.value();
  return out;
}

RunRecord train_sound(const RunConfig& c, const Dataset& d, RunRecord rec) {
  const ArtifactPaths paths(c.weights_dir);
  std::mt19937_64 init_rng(derive(c.seed, kSoundInit)), shuffle_rng(derive(c.seed, kShuffle));
  SoundModel sound(c.sound, init_rng);
  const auto train = sound_items(d, Split::train, sound, rec);
  const auto val = sound_items(d, Split::val, sound, rec);
  if (train.empty()) throw DomainError("no training videos with audio for the sound stream");

  std::vector<std::pair<std::size_t, std::size_t>> units;  // (video, segment)
  for (std::size_t i = 0; i < train.size(); ++i)
    for (std::size_t s = 0; s < train[i].segments.size(); ++s) units.emplace_back(i, s);

  nn::Sgd opt(sound.stream().params(), c.sound_schedule.sgd);
  std::map<std::string, int> action_index;
  std::vector<EpochPredictions> history;
  const auto bs = static_cast<std::size_t>(c.sound_schedule.batch_size);
  const double per_segment = 1.0 / static_cast<double>(c.sound.n_segments);

  for (int epoch = 1; epoch <= c.sound_schedule.epochs; ++epoch) {
    const bool frozen = c.sound_schedule.frozen_norm(epoch);
    if (frozen && !c.sound_schedule.frozen_norm(epoch - 1))
      opt.set_learning_rate(c.sound_schedule.sgd.learning_rate * c.sound_schedule.frozen_norm_lr_scale);
    const nn::Mode mode = frozen ? nn::Mode::eval : nn::Mode::train;
    const auto order = shuffled(units.size(), shuffle_rng);
    double total = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b < order.size(); b += bs) {
      std::vector<Spectrogram> segs;
      std::vector<CountLabel> labels;
      std::vector<const VideoRecord*> recs;
      for (std::size_t k = b; k < std::min(order.size(), b + bs); ++k) {
        const auto [vi, si] = units[order[k]];
        segs.push_back(train[vi].segments[si]);
        labels.emplace_back(train[vi].record->count.value() * per_segment);
        recs.push_back(train[vi].record);
      }
      const auto actions = action_labels(recs, c.sound.head, action_index);
      auto batch = sound.stream().forward(sound.to_input(segs), mode);
      std::vector<double> counts;
      for (const auto& h : batch.heads) counts.push_back(h.count);
      const LossGrad lg = counting_loss(counts, labels, stack_class_dists(batch.heads), c.sound.head, actions);
      check_finite(lg.value, "sound", epoch);
      opt.zero_grad();
      sound.stream().backward(lg);
      opt.step();
      total += lg.value;
      ++batches;
    }
    if (!frozen) sound.stream().estimate_batch_norm([&] {
      for (std::size_t b = 0; b < order.size() && b < kNormBatches * bs; b += bs) {
        std::vector<Spectrogram> segs;
        for (std::size_t k = b; k < std::min(order.size(), b + bs); ++k) {
          const auto [vi, si] = units[order[k]];
          segs.push_back(train[vi].segments[si]);
        }
        sound.stream().forward(sound.to_input(segs), nn::Mode::train);
      }
    });
    EpochLog log{epoch, total / batches, std::nullopt};
    if (!val.empty()) {
      log.val_relative_mae = relative_mae_of(sound_video_predictions(val, sound), records_of(val));
      if (*log.val_relative_mae < c.reliability.theta_r_a)
        history.push_back({*log.val_relative_mae, sound_video_predictions(train, sound)});
    }
    log_epoch("sound", log);
    rec.epochs.push_back(log);
  }
  sound.save(paths.sound);
  save_epochs(paths.sound_epochs, history, sound_video_predictions(train, sound));
  rec.artifacts["sound_weights"] = paths.sound.string();
  rec.artifacts["sound_epochs"] = paths.sound_epochs.string();
  refresh_empirical_table(c, rec);
  return rec;
}

Tensor first_audio_tap(const Dataset& d, const VideoRecord& r, SoundModel& sound) {
  const auto audio = d.media->audio(r);
  if (!audio) return {};
  return sound.sound_count(sound.segments(*audio, r.start_s, r.end_s)).mid;
}

RunRecord train_stride(const RunConfig& c, const Dataset& d, RunRecord rec) {
  const ArtifactPaths paths(c.weights_dir);
  std::mt19937_64 init_rng(derive(c.seed, kStrideInit)), shuffle_rng(derive(c.seed, kShuffle)),
      neg_rng(derive(c.seed, kNegatives));
  SightModel sight(c.sight, init_rng);
  sight.load(paths.sight);
  std::unique_ptr<SoundModel> sound;
  if (c.stride.audio_enabled) {
    sound = std::make_unique<SoundModel>(c.sound, init_rng);
    sound->load(paths.sound);
  }

  std::map<std::string, StrideMiningResult> mined;
  const auto train = sight_items(d, Split::train, c, rec);
  if (fs::exists(paths.mining)) {
    for (auto& m : load_mining(paths.mining)) mined[m.video_id] = std::move(m);
    rec.notes.push_back("reused mining sidecar " + paths.mining.string());
  } else {
    std::vector<StrideMiningResult> results;
    for (const VideoRecord* r : d.manifest.split(Split::train)) {
      const auto video = d.media->video(*r);
      auto m = mine_strides(*video, record_segment(*r, *video), r->mean_period_frames(), sight, c.stride);
      m.video_id = r->video_id;
      if (!m.usable) spdlog::warn("{}: unusable for stride training (no covering stride)", r->video_id);
      results.push_back(m);
      mined[m.video_id] = std::move(m);
    }
    save_mining(paths.mining, results);
  }
  rec.artifacts["mining"] = paths.mining.string();

  struct Pairable {
    std::vector<Tensor> taps;  // per stride 1..S_K
    Tensor audio;
    std::vector<int> negatives;
    int positive = 1;
  };
  std::vector<Pairable> items;
  for (const auto& it : train) {
    const auto m = mined.find(it.record->video_id);
    if (m == mined.end() || !m->second.usable) continue;
    if (m->second.negative_strides.empty()) {
      rec.skipped.push_back(it.record->video_id + ": no negative stride");
      continue;
    }
    Pairable p;
    p.positive = m->second.positive_stride;
    p.negatives.assign(m->second.negative_strides.begin(), m->second.negative_strides.end());
    for (int s = 1; s <= c.stride.s_k_train; ++s)
      p.taps.push_back(
          sight.extract_visual_features(make_clip(*it.video, it.segment, it.segment.begin, s, c.sight.clip)).mid);
    if (sound) {
      p.audio = first_audio_tap(d, *it.record, *sound);
      if (p.audio.empty()) {
        rec.skipped.push_back(it.record->video_id + ": no audio for an audio-enabled stride module");
        continue;
      }
    }
    items.push_back(std::move(p));
  }
  if (items.empty()) throw DomainError("no training videos with both positive and negative strides");

  const int visual_channels = items.front().taps.front().dim(1);
  const int audio_channels = sound ? items.front().audio.dim(1) : 0;
  StrideModule module(visual_channels, audio_channels, c.stride, init_rng);
  nn::Sgd opt(module.params(), c.stride_schedule.sgd);
  const auto bs = static_cast<std::size_t>(c.stride_schedule.batch_size);

  for (int epoch = 1; epoch <= c.stride_schedule.epochs; ++epoch) {
    const auto order = shuffled(items.size(), shuffle_rng);
    double total = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b < order.size(); b += bs) {
      std::vector<Tensor> pos, neg, audio;
      for (std::size_t k = b; k < std::min(order.size(), b + bs); ++k) {
        const auto& p = items[order[k]];
        std::uniform_int_distribution<std::size_t> pick(0, p.negatives.size() - 1);
        pos.push_back(p.taps[static_cast<std::size_t>(p.positive - 1)]);
        neg.push_back(p.taps[static_cast<std::size_t>(p.negatives[pick(neg_rng)] - 1)]);
        if (sound) audio.push_back(p.audio);
      }
      const std::size_t n = pos.size();
      std::vector<Tensor> visual = pos;
      visual.insert(visual.end(), neg.begin(), neg.end());
      Tensor audio_batch;
      if (sound) {
        std::vector<Tensor> both = audio;
        both.insert(both.end(), audio.begin(), audio.end());
        audio_batch = Tensor::stack(both);
      }
      const auto scores = module.forward(Tensor::stack(visual), sound ? &audio_batch : nullptr, nn::Mode::train);
      const std::span<const double> all(scores);
      const RankingLoss rl = ranking_loss_grad(all.subspan(n), all.first(n), c.stride.margin);
      check_finite(rl.value, "stride", epoch);
      std::vector<double> d_scores = rl.d_pos;
      d_scores.insert(d_scores.end(), rl.d_neg.begin(), rl.d_neg.end());
      opt.zero_grad();
      module.backward(d_scores);
      opt.step();
      total += rl.value;
      ++batches;
    }
    EpochLog log{epoch, total / batches, std::nullopt};
    log_epoch("stride", log);
    rec.epochs.push_back(log);
  }
  module.estimate_batch_norm([&] {
    for (std::size_t b = 0; b < items.size(); b += bs) {
      std::vector<Tensor> visual, audio;
      for (std::size_t k = b; k < std::min(items.size(), b + bs); ++k) {
        const auto& p = items[k];
        visual.push_back(p.taps[static_cast<std::size_t>(p.positive - 1)]);
        visual.push_back(p.taps[static_cast<std::size_t>(p.negatives.front() - 1)]);
        if (sound) audio.insert(audio.end(), 2, p.audio);
      }
      Tensor audio_batch;
      if (sound) audio_batch = Tensor::stack(audio);
      module.forward(Tensor::stack(visual), sound ? &audio_batch : nullptr, nn::Mode::train);
    }
  });
  module.save(paths.stride);
  rec.artifacts["stride_weights"] = paths.stride.string();
  return rec;
}

struct GateItem {
  const VideoRecord* record = nullptr;
  std::vector<double> visual;
  Tensor audio;
  double c_v = 0.0, c_a = 0.0;
};

RunRecord train_reliability(const RunConfig& c, const Dataset& d, RunRecord rec) {
  const ArtifactPaths paths(c.weights_dir);
  std::mt19937_64 init_rng(derive(c.seed, kGateInit)), shuffle_rng(derive(c.seed, kShuffle));
  SightModel sight(c.sight, init_rng);
  sight.load(paths.sight);
  SoundModel sound(c.sound, init_rng);
  sound.load(paths.sound);
  if (!fs::exists(paths.empirical)) refresh_empirical_table(c, rec);
  const auto table = load_empirical_table(paths.empirical);
  rec.artifacts["empirical"] = paths.empirical.string();

  auto gather = [&](Split split, bool from_table) {
    std::vector<GateItem> items;
    for (const auto& it : sight_items(d, split, c, rec)) {
      const VideoRecord& r = *it.record;
      GateItem g;
      g.record = &r;
      const auto audio = d.media->audio(r);
      if (!audio) {
        rec.skipped.push_back(r.video_id + ": no audio");
        continue;
      }
      const auto snd = sound.sound_count(sound.segments(*audio, r.start_s, r.end_s));
      g.audio = snd.mid;
      g.visual = sight.extract_visual_features(make_clip(*it.video, it.segment, it.segment.begin, it.stride, c.sight.clip))
                     .feature;
      if (from_table) {
        const auto e = table.find(r.video_id);
        if (e == table.end()) {
          rec.skipped.push_back(r.video_id + ": missing from empirical table");
          continue;
        }
        g.c_v = e->second.avg_sight_pred;
        g.c_a = e->second.avg_sound_pred;
      } else {
        g.c_v = sight.video_count(*it.video, it.segment, it.stride, c.aggregation).count;
        g.c_a = snd.prediction.value();
      }
      items.push_back(std::move(g));
    }
    return items;
  };
  const auto train = gather(Split::train, true);
  const auto val = gather(Split::val, false);
  if (train.empty()) throw DomainError("no training videos for the reliability gate");

  ReliabilityGate gate(static_cast<int>(train.front().visual.size()), train.front().audio.dim(1), init_rng);
  nn::Sgd opt(gate.params(), c.reliability_schedule.sgd);
  const auto bs = static_cast<std::size_t>(c.reliability_schedule.batch_size);

  auto batch_inputs = [](const std::vector<GateItem>& items, std::span<const std::size_t> idx) {
    const int f = static_cast<int>(items[idx.front()].visual.size());
    Tensor visual({static_cast<int>(idx.size()), f});
    std::vector<Tensor> audio;
    std::vector<double> cv, ca;
    std::vector<CountLabel> labels;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto& g = items[idx[k]];
      std::copy(g.visual.begin(), g.visual.end(), visual.data() + k * static_cast<std::size_t>(f));
      audio.push_back(g.audio);
      cv.push_back(g.c_v);
      ca.push_back(g.c_a);
      labels.push_back(g.record->count);
    }
    return std::make_tuple(std::move(visual), Tensor::stack(audio), cv, ca, labels);
  };

  for (int epoch = 1; epoch <= c.reliability_schedule.epochs; ++epoch) {
    const auto order = shuffled(train.size(), shuffle_rng);
    double total = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b < order.size(); b += bs) {
      const std::span<const std::size_t> idx(order.data() + b, std::min(bs, order.size() - b));
      auto [visual, audio, cv, ca, labels] = batch_inputs(train, idx);
      const auto gammas = gate.forward(visual, audio, nn::Mode::train);
      const GateLoss gl = gate_loss(gammas, cv, ca, labels);
      check_finite(gl.value, "reliability", epoch);
      opt.zero_grad();
      gate.backward(gl.d_gamma);
      opt.step();
      total += gl.value;
      ++batches;
    }
    gate.estimate_batch_norm([&] {
      for (std::size_t b = 0; b < order.size(); b += bs) {
        const std::span<const std::size_t> idx(order.data() + b, std::min(bs, order.size() - b));
        auto [visual, audio, cv, ca, labels] = batch_inputs(train, idx);
        gate.forward(visual, audio, nn::Mode::train);
      }
    });
    EpochLog log{epoch, total / batches, std::nullopt};
    if (!val.empty()) {
      std::vector<std::size_t> all(val.size());
      std::iota(all.begin(), all.end(), 0);
      auto [visual, audio, cv, ca, labels] = batch_inputs(val, all);
      log.val_relative_mae = gate_loss(gate.forward(visual, audio, nn::Mode::eval), cv, ca, labels).value;
    }
    log_epoch("reliability", log);
    rec.epochs.push_back(log);
  }
  gate.save(paths.gate);
  rec.artifacts["gate_weights"] = paths.gate.string();
  return rec;
}

}  // namespace

std::optional<int> positive_stride(const VideoRecord& record, const RunConfig& config) {
  const double period = record.mean_period_frames();
  for (int s = 1; s <= config.stride.s_k_train; ++s)
    if (covers_two_repetitions(s, config.sight.clip.clip_len, period)) return s;
  return std::nullopt;
}

double sight_count_at_positive_stride(const VideoRecord& record, const VideoSource& video, SightModel& sight,
                                      const RunConfig& config) {
  const auto s = positive_stride(record, config);
  if (!s) throw DomainError(record.video_id + ": no stride covers two repetitions");
  return sight.video_count(video, record_segment(record, video), *s, config.aggregation).count;
}

Dataset open_dataset(const RunConfig& config) {
  if (config.dataset.empty()) return synth_dataset(config.synthetic).dataset;
  Dataset d;
  d.manifest = load_manifest(config.dataset);
  d.media = std::make_shared<FileMediaProvider>(d.manifest.base_dir, config.work_dir,
                                                config.sound.spectrogram.sample_rate);
  return d;
}

Models build_models(const RunConfig& c, std::mt19937_64& rng) {
  Models m;
  m.sight = std::make_unique<SightModel>(c.sight, rng);
  m.sound = std::make_unique<SoundModel>(c.sound, rng);
  m.stride = std::make_unique<StrideModule>(sight_tap_channels(c.sight.backbone), sound_tap_channels(c.sound.backbone),
                                            c.stride, rng);
  m.gate = std::make_unique<ReliabilityGate>(c.sight.backbone.feature_dim, sound_tap_channels(c.sound.backbone), rng);
  return m;
}

Models load_models(const RunConfig& c) {
  std::mt19937_64 rng(derive(c.seed, 0));
  Models m = build_models(c, rng);
  const ArtifactPaths paths(c.weights_dir);
  m.sight->load(paths.sight);
  if (!c.no_audio) m.sound->load(paths.sound);
  if (!c.fixed_stride) m.stride->load(paths.stride);
  if (!c.no_audio && !c.gamma_override) m.gate->load(paths.gate);
  return m;
}

RunRecord train_stage(const RunConfig& config, Stage stage, const Dataset& dataset) {
  validate(config);
  RunRecord rec;
  rec.stage = stage;
  rec.config = to_json(config);
  for (const auto& k : config.overrides) rec.notes.push_back("override: " + k);
  fs::create_directories(config.weights_dir);
  switch (stage) {
    case Stage::train_sight: rec = train_sight(config, dataset, std::move(rec)); break;
    case Stage::train_sound: rec = train_sound(config, dataset, std::move(rec)); break;
    case Stage::train_stride: rec = train_stride(config, dataset, std::move(rec)); break;
    case Stage::train_reliability: rec = train_reliability(config, dataset, std::move(rec)); break;
    default: throw ArgumentError(std::string(to_string(stage)) + " is not a training stage");
  }
  const fs::path record_path = config.run_dir / (std::string(to_string(stage)) + "_record.json");
  rec.artifacts["run_record"] = record_path.string();
  rec.save(record_path);
  return rec;
}

RunRecord train_stage(const RunConfig& config, Stage stage) { return train_stage(config, stage, open_dataset(config)); }

InferenceOptions inference_options(const RunConfig& c) {
  return {c.fixed_stride, c.no_audio, c.gamma_override, c.aggregation};
}

InferenceResult infer_video(const VideoRecord& record, const VideoSource& video, const AudioSource* audio,
                            Models& models, const InferenceOptions& opt) {
  if (!models.sight) throw DependencyError("sight model is not loaded");
  const SegmentFrames seg = record_segment(record, video);
  std::optional<SoundResult> snd;
  if (audio != nullptr && !opt.no_audio) {
    if (!models.sound) throw DependencyError("sound model is not loaded");
    snd = models.sound->sound_count(models.sound->segments(*audio, record.start_s, record.end_s));
  }

  InferenceResult r;
  StrideChoice choice;
  if (opt.fixed_stride) {
    choice = select_stride(video, seg, *models.sight, nullptr, models.stride.get(), opt.fixed_stride);
  } else {
    if (!models.stride) throw DependencyError("stride module is not loaded");
    Tensor zero_tap;
    const Tensor* tap = snd ? &snd->mid : nullptr;
    if (models.stride->audio_enabled() && tap == nullptr) {
      if (!models.sound) throw DependencyError("sound model is needed to shape the audio input of the stride module");
      const auto& sc = models.sound->config();
      const std::vector<Spectrogram> silent(1, Spectrogram(sc.spectrogram.bins(), sc.spectrogram.segment_frames));
      zero_tap = Tensor::zeros_like(models.sound->sound_count(silent).mid);
      tap = &zero_tap;
    }
    choice = select_stride(video, seg, *models.sight, tap, models.stride.get());
  }
  r.stride = choice.stride;
  r.stride_scores = choice.scores;
  r.sight = CountPrediction(models.sight->video_count(video, seg, choice.stride, opt.aggregation).count, Modality::sight);

  if (snd) {
    r.sound = snd->prediction;
    if (opt.gamma_override) {
      r.gamma = *opt.gamma_override;
    } else {
      if (!models.gate) throw DependencyError("reliability gate is not loaded");
      r.gamma = models.gate->gamma(choice.features.feature, snd->mid);
    }
    r.fused = fuse(r.sight, *r.sound, r.gamma);
  } else {
    r.gamma = 0.0;
    r.fused = CountPrediction(r.sight.value(), Modality::fused);
  }
  return r;
}

Evaluation evaluate(const Dataset& dataset, Split split, Models& models, const InferenceOptions& options) {
  std::vector<PredictionRow> rows;
  for (const VideoRecord* r : dataset.manifest.split(split)) {
    const auto video = dataset.media->video(*r);
    const auto audio = dataset.media->audio(*r);
    const auto res = infer_video(*r, *video, audio.get(), models, options);
    PredictionRow row;
    row.video_id = r->video_id;
    row.label = r->count.value();
    row.sight = res.sight.value();
    if (res.sound) row.sound = res.sound->value();
    row.fused = res.fused.value();
    row.gamma = res.gamma;
    row.stride = res.stride;
    row.tags = r->challenge_tags;
    rows.push_back(std::move(row));
  }
  return evaluate_rows(std::move(rows));
}

Evaluation evaluate_rows(std::vector<PredictionRow> rows) {
  Evaluation e;
  std::vector<CountPrediction> fused, sight, sound;
  std::vector<CountLabel> labels, sound_labels;
  std::vector<TagSet> tags, sound_tags;
  for (const auto& r : rows) {
    fused.emplace_back(r.fused, Modality::fused);
    sight.emplace_back(r.sight, Modality::sight);
    labels.emplace_back(r.label);
    tags.push_back(r.tags);
    if (r.sound) {
      sound.emplace_back(*r.sound, Modality::sound);
      sound_labels.emplace_back(r.label);
      sound_tags.push_back(r.tags);
    }
  }
  if (!rows.empty()) {
    e.fused = evaluate_report(fused, labels, tags);
    e.sight = evaluate_report(sight, labels, tags);
  }
  if (!sound.empty()) e.sound = evaluate_report(sound, sound_labels, sound_tags);
  e.rows = std::move(rows);
  return e;
}

}  // namespace avcount
