#include "avcount/stride_decision.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "avcount/errors.hpp"

namespace avcount {

using nn::Triple;
using json = nlohmann::json;

void validate(const StrideModuleConfig& c) {
  if (!(c.margin > 0.0)) throw ConfigError("stride margin must be positive");
  if (!(c.theta_s > 0.0 && c.theta_s < 1.0)) throw ConfigError("theta_s must lie in (0, 1)");
  if (c.s_k_train < 1 || c.s_k_infer < 1) throw ConfigError("S_K must be >= 1");
}

namespace {

void build_branch(nn::Sequential& branch, int channels, Triple kernel) {
  branch.emplace<nn::ResidualBlock>(channels, channels, kernel, Triple{1, 1, 1});
  branch.emplace<nn::GlobalAvgPool>();
}

}  // namespace

StrideModule::StrideModule(int visual_channels, int audio_channels, StrideModuleConfig config, std::mt19937_64& rng)
    : config_(config),
      visual_channels_(visual_channels),
      audio_channels_(config.audio_enabled ? audio_channels : 0),
      fc_(visual_channels + (config.audio_enabled ? audio_channels : 0), 1) {
  validate(config_);
  if (visual_channels < 1 || (config_.audio_enabled && audio_channels < 1))
    throw ConfigError("stride module channel counts must be positive");
  build_branch(visual_branch_, visual_channels_, {3, 3, 3});
  if (config_.audio_enabled) build_branch(audio_branch_, audio_channels_, {1, 3, 3});
  visual_branch_.reset_parameters(rng);
  audio_branch_.reset_parameters(rng);
  fc_.reset_parameters(rng);
}

std::vector<double> StrideModule::forward(const Tensor& visual_mid, const Tensor* audio_mid, nn::Mode mode) {
  if (visual_mid.rank() != 5 || visual_mid.dim(1) != visual_channels_)
    throw ArgumentError("visual tap must be [N, " + std::to_string(visual_channels_) + ", D, H, W], got " +
                        visual_mid.shape_string());
  Tensor joined = visual_branch_.forward(visual_mid, mode);
  if (config_.audio_enabled) {
    if (audio_mid == nullptr) throw ArgumentError("stride module expects an audio tap");
    if (audio_mid->rank() != 5 || audio_mid->dim(1) != audio_channels_ || audio_mid->dim(0) != visual_mid.dim(0))
      throw ArgumentError("audio tap must be [N, " + std::to_string(audio_channels_) + ", 1, H, W], got " +
                          audio_mid->shape_string());
    joined = nn::concat_columns(joined, audio_branch_.forward(*audio_mid, mode));
  }
  const Tensor s = fc_.forward(joined, mode);
  return {s.values().begin(), s.values().end()};
}

void StrideModule::backward(std::span<const double> d_scores) {
  Tensor g({static_cast<int>(d_scores.size()), 1}, std::vector<double>(d_scores.begin(), d_scores.end()));
  Tensor d_joined = fc_.backward(g);
  if (config_.audio_enabled) {
    auto [dv, da] = nn::split_columns(d_joined, visual_channels_);
    audio_branch_.backward(da);
    visual_branch_.backward(dv);
  } else {
    visual_branch_.backward(d_joined);
  }
}

double StrideModule::score_stride(const Tensor& visual_mid, const Tensor* audio_mid) {
  if (visual_mid.rank() < 1 || visual_mid.dim(0) != 1) throw ArgumentError("score_stride takes a single sample");
  return forward(visual_mid, audio_mid, nn::Mode::eval).front();
}

nn::ParamSet StrideModule::params() {
  nn::ParamSet ps;
  visual_branch_.collect(ps, "stride.visual");
  if (config_.audio_enabled) audio_branch_.collect(ps, "stride.audio");
  fc_.collect(ps, "stride.fc");
  return ps;
}

double ranking_loss(std::span<const double> neg, std::span<const double> pos, double margin) {
  return ranking_loss_grad(neg, pos, margin).value;
}

RankingLoss ranking_loss_grad(std::span<const double> neg, std::span<const double> pos, double margin) {
  if (neg.size() != pos.size()) throw ArgumentError("ranking_loss needs equally sized score batches");
  if (neg.empty()) throw ArgumentError("ranking_loss needs a non-empty batch");
  const double inv_n = 1.0 / static_cast<double>(neg.size());
  RankingLoss r;
  r.d_neg.assign(neg.size(), 0.0);
  r.d_pos.assign(pos.size(), 0.0);
  for (std::size_t i = 0; i < neg.size(); ++i) {
    const double h = neg[i] - pos[i] + margin;
    if (h > 0.0) {
      r.value += h * inv_n;
      r.d_neg[i] = inv_n;
      r.d_pos[i] = -inv_n;
    }
  }
  return r;
}

bool covers_two_repetitions(int stride, int clip_len, double mean_period) {
  return static_cast<double>(clip_len - 1) * stride >= 2.0 * mean_period;
}

StrideMiningResult mine_from_counts(double mean_period, int clip_len, const std::map<int, double>& counts,
                                    const StrideModuleConfig& config) {
  if (!(mean_period > 0.0)) throw DomainError("mean period must be positive");
  StrideMiningResult r;
  r.per_stride_counts = counts;
  for (int s = 1; s <= config.s_k_train; ++s)
    if (!counts.contains(s)) throw ArgumentError("missing count for stride " + std::to_string(s));
  for (int s = 1; s <= config.s_k_train; ++s) {
    if (covers_two_repetitions(s, clip_len, mean_period)) {
      r.positive_stride = s;
      break;
    }
  }
  if (r.positive_stride == 0) return r;
  r.usable = true;
  const double c_star = counts.at(r.positive_stride);
  for (int s = 1; s <= config.s_k_train; ++s) {
    const double delta = c_star > 1e-9 ? (c_star - counts.at(s)) / c_star : 0.0;
    r.deviations[s] = s == r.positive_stride ? 0.0 : delta;
    if (s == r.positive_stride) continue;
    if (!covers_two_repetitions(s, clip_len, mean_period) || delta > config.theta_s) r.negative_strides.insert(s);
  }
  return r;
}

StrideMiningResult mine_strides(const VideoSource& video, const SegmentFrames& segment, double mean_period,
                                SightModel& sight, const StrideModuleConfig& config,
                                std::vector<VisualFeatures>* first_clip_features) {
  std::map<int, double> counts;
  if (first_clip_features != nullptr) first_clip_features->clear();
  for (int s = 1; s <= config.s_k_train; ++s) {
    auto vc = sight.video_count(video, segment, s);
    counts[s] = vc.count;
    if (first_clip_features != nullptr) first_clip_features->push_back(std::move(vc.first_clip));
  }
  return mine_from_counts(mean_period, sight.config().clip.clip_len, counts, config);
}

int argmax_stride(std::span<const double> scores) {
  if (scores.empty()) throw ArgumentError("no stride scores");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return static_cast<int>(best) + 1;
}

StrideChoice select_stride(const VideoSource& video, const SegmentFrames& segment, SightModel& sight,
                           const Tensor* audio_mid, StrideModule* module, std::optional<int> fixed_stride) {
  const auto& clip_cfg = sight.config().clip;
  StrideChoice choice;
  if (fixed_stride) {
    if (*fixed_stride < 1) throw ArgumentError("fixed stride must be >= 1");
    choice.stride = *fixed_stride;
    choice.features = sight.extract_visual_features(make_clip(video, segment, segment.begin, choice.stride, clip_cfg));
    return choice;
  }
  if (module == nullptr) throw DependencyError("stride selection needs a stride module");
  std::vector<VisualFeatures> feats;
  for (int s = 1; s <= module->config().s_k_infer; ++s) {
    feats.push_back(sight.extract_visual_features(make_clip(video, segment, segment.begin, s, clip_cfg)));
    choice.scores.push_back(module->score_stride(feats.back().mid, module->audio_enabled() ? audio_mid : nullptr));
  }
  choice.stride = argmax_stride(choice.scores);
  choice.score = choice.scores[static_cast<std::size_t>(choice.stride - 1)];
  choice.features = std::move(feats[static_cast<std::size_t>(choice.stride - 1)]);
  return choice;
}

namespace {

json int_map(const std::map<int, double>& m) {
  json j = json::object();
  for (const auto& [k, v] : m) j[std::to_string(k)] = v;
  return j;
}

std::map<int, double> parse_int_map(const json& j) {
  std::map<int, double> m;
  for (const auto& [k, v] : j.items()) m[std::stoi(k)] = v.get<double>();
  return m;
}

}  // namespace

void save_mining(const std::filesystem::path& path, std::span<const StrideMiningResult> results) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DependencyError("cannot write mining sidecar " + path.string());
  for (const auto& r : results) {
    json j{{"video_id", r.video_id},
           {"usable", r.usable},
           {"positive_stride", r.positive_stride},
           {"negative_strides", r.negative_strides},
           {"per_stride_counts", int_map(r.per_stride_counts)},
           {"deviations", int_map(r.deviations)}};
    out << j.dump() << '\n';
  }
}

std::vector<StrideMiningResult> load_mining(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError("missing mining sidecar " + path.string());
  std::vector<StrideMiningResult> results;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      StrideMiningResult r;
      r.video_id = j.at("video_id").get<std::string>();
      r.usable = j.value("usable", true);
      r.positive_stride = j.at("positive_stride").get<int>();
      r.negative_strides = j.at("negative_strides").get<std::set<int>>();
      r.per_stride_counts = parse_int_map(j.at("per_stride_counts"));
      r.deviations = parse_int_map(j.at("deviations"));
      results.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": " + e.what(), line_no);
    }
  }
  return results;
}

}  // namespace avcount
