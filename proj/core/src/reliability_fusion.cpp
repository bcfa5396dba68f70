#include "avcount/reliability_fusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "avcount/errors.hpp"

namespace avcount {

using json = nlohmann::json;

void validate(const ReliabilityConfig& c) {
  if (!(c.theta_r_v > 0.0) || !(c.theta_r_a > 0.0)) throw ConfigError("reliability thresholds must be positive");
  if (c.epochs < 0) throw ConfigError("reliability epochs must be >= 0");
  if (!(c.learning_rate > 0.0)) throw ConfigError("reliability learning rate must be positive");
  if (c.batch_size < 1) throw ConfigError("reliability batch size must be >= 1");
}

ReliabilityGate::ReliabilityGate(int visual_feature_dim, int audio_channels, std::mt19937_64& rng)
    : visual_dim_(visual_feature_dim), audio_channels_(audio_channels), fc_(visual_feature_dim + audio_channels, 1) {
  if (visual_feature_dim < 1 || audio_channels < 1) throw ConfigError("gate dimensions must be positive");
  audio_branch_.emplace<nn::ResidualBlock>(audio_channels, audio_channels, nn::Triple{1, 3, 3}, nn::Triple{1, 1, 1});
  audio_branch_.emplace<nn::GlobalAvgPool>();
  audio_branch_.reset_parameters(rng);
  fc_.reset_parameters(rng);
}

std::vector<double> ReliabilityGate::forward(const Tensor& visual, const Tensor& audio_mid, nn::Mode mode) {
  if (visual.rank() != 2 || visual.dim(1) != visual_dim_)
    throw ArgumentError("gate expects visual features [N, " + std::to_string(visual_dim_) + "], got " +
                        visual.shape_string());
  if (audio_mid.rank() != 5 || audio_mid.dim(1) != audio_channels_ || audio_mid.dim(0) != visual.dim(0))
    throw ArgumentError("gate expects an audio tap [N, " + std::to_string(audio_channels_) + ", 1, H, W], got " +
                        audio_mid.shape_string());
  const Tensor logits = fc_.forward(nn::concat_columns(visual, audio_branch_.forward(audio_mid, mode)), mode);
  gammas_.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) gammas_[i] = 1.0 / (1.0 + std::exp(-logits[i]));
  return gammas_;
}

void ReliabilityGate::backward(std::span<const double> d_gamma) {
  if (d_gamma.size() != gammas_.size()) throw ArgumentError("gate backward batch mismatch");
  Tensor g({static_cast<int>(d_gamma.size()), 1});
  for (std::size_t i = 0; i < d_gamma.size(); ++i) g[i] = d_gamma[i] * gammas_[i] * (1.0 - gammas_[i]);
  auto [dv, da] = nn::split_columns(fc_.backward(g), visual_dim_);
  audio_branch_.backward(da);
}

double ReliabilityGate::gamma(std::span<const double> visual_feature, const Tensor& audio_mid) {
  Tensor v({1, static_cast<int>(visual_feature.size())},
           std::vector<double>(visual_feature.begin(), visual_feature.end()));
  return forward(v, audio_mid, nn::Mode::eval).front();
}

nn::ParamSet ReliabilityGate::params() {
  nn::ParamSet ps;
  audio_branch_.collect(ps, "gate.audio");
  fc_.collect(ps, "gate.fc");
  return ps;
}

CountPrediction fuse(const CountPrediction& c_v, const CountPrediction& c_a, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ArgumentError("gamma must lie in [0, 1]");
  if (gamma == 0.0) return CountPrediction(c_v.value(), Modality::fused);
  if (gamma == 1.0) return CountPrediction(c_a.value(), Modality::fused);
  const double lo = std::min(c_v.value(), c_a.value()), hi = std::max(c_v.value(), c_a.value());
  return CountPrediction(std::clamp(c_v.value() * (1.0 - gamma) + c_a.value() * gamma, lo, hi), Modality::fused);
}

double reliability_loss(std::span<const double> fused, std::span<const CountLabel> labels) {
  if (fused.size() != labels.size()) throw ArgumentError("reliability_loss needs equally sized batches");
  if (fused.empty()) throw ArgumentError("reliability_loss needs a non-empty batch");
  double sum = 0.0;
  for (std::size_t i = 0; i < fused.size(); ++i) sum += std::abs(fused[i] - labels[i].value()) / labels[i].value();
  return sum / static_cast<double>(fused.size());
}

GateLoss gate_loss(std::span<const double> gammas, std::span<const double> c_v, std::span<const double> c_a,
                   std::span<const CountLabel> labels) {
  const std::size_t n = gammas.size();
  if (c_v.size() != n || c_a.size() != n || labels.size() != n) throw ArgumentError("gate_loss batch mismatch");
  if (n == 0) throw ArgumentError("gate_loss needs a non-empty batch");
  GateLoss r;
  r.d_gamma.assign(n, 0.0);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double l = labels[i].value();
    const double c = c_v[i] * (1.0 - gammas[i]) + c_a[i] * gammas[i];
    const double diff = c - l;
    r.value += std::abs(diff) / l * inv_n;
    const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    r.d_gamma[i] = sign / l * (c_a[i] - c_v[i]) * inv_n;
  }
  return r;
}

StreamAverage average_qualifying(std::span<const EpochPredictions> epochs, double theta,
                                 const std::map<std::string, double>& final_predictions) {
  StreamAverage r;
  std::map<std::string, double> sums;
  for (const auto& e : epochs) {
    if (!(e.val_relative_mae < theta)) continue;
    for (const auto& [id, p] : e.train_predictions) {
      sums[id] += p;
      ++r.recordings[id];
    }
  }
  if (r.recordings.empty()) {
    r.fallback = true;
    r.average = final_predictions;
    return r;
  }
  for (const auto& [id, s] : sums) r.average[id] = s / r.recordings[id];
  for (const auto& [id, p] : final_predictions)
    if (!r.average.contains(id)) r.average[id] = p;
  return r;
}

EmpiricalPredictionTable collect_empirical_predictions(std::span<const EpochPredictions> sight_epochs,
                                                       const std::map<std::string, double>& sight_final,
                                                       std::span<const EpochPredictions> sound_epochs,
                                                       const std::map<std::string, double>& sound_final,
                                                       const ReliabilityConfig& config) {
  const StreamAverage v = average_qualifying(sight_epochs, config.theta_r_v, sight_final);
  const StreamAverage a = average_qualifying(sound_epochs, config.theta_r_a, sound_final);
  if (v.fallback) spdlog::warn("no sight epoch reached validation loss < {}; using final-model predictions", config.theta_r_v);
  if (a.fallback) spdlog::warn("no sound epoch reached validation loss < {}; using final-model predictions", config.theta_r_a);

  std::set<std::string> ids;
  for (const auto& [id, p] : v.average) ids.insert(id);
  for (const auto& [id, p] : a.average) ids.insert(id);
  EmpiricalPredictionTable table;
  for (const auto& id : ids) {
    EmpiricalEntry e;
    if (auto it = v.average.find(id); it != v.average.end()) e.avg_sight_pred = it->second;
    if (auto it = a.average.find(id); it != a.average.end()) e.avg_sound_pred = it->second;
    if (auto it = v.recordings.find(id); it != v.recordings.end()) e.n_recordings_v = it->second;
    if (auto it = a.recordings.find(id); it != a.recordings.end()) e.n_recordings_a = it->second;
    e.fallback_v = e.n_recordings_v == 0;
    e.fallback_a = e.n_recordings_a == 0;
    table[id] = e;
  }
  return table;
}

void save_empirical_table(const std::filesystem::path& path, const EmpiricalPredictionTable& table) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DependencyError("cannot write empirical table " + path.string());
  for (const auto& [id, e] : table) {
    json j{{"video_id", id},
           {"avg_sight_pred", e.avg_sight_pred},
           {"avg_sound_pred", e.avg_sound_pred},
           {"n_recordings_v", e.n_recordings_v},
           {"n_recordings_a", e.n_recordings_a},
           {"fallback_v", e.fallback_v},
           {"fallback_a", e.fallback_a}};
    out << j.dump() << '\n';
  }
}

EmpiricalPredictionTable load_empirical_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError("missing empirical prediction table " + path.string());
  EmpiricalPredictionTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      EmpiricalEntry e;
      e.avg_sight_pred = j.at("avg_sight_pred").get<double>();
      e.avg_sound_pred = j.at("avg_sound_pred").get<double>();
      e.n_recordings_v = j.at("n_recordings_v").get<int>();
      e.n_recordings_a = j.at("n_recordings_a").get<int>();
      e.fallback_v = j.value("fallback_v", e.n_recordings_v == 0);
      e.fallback_a = j.value("fallback_a", e.n_recordings_a == 0);
      table[j.at("video_id").get<std::string>()] = e;
    } catch (const json::exception& ex) {
      throw ParseError(path.string() + ": " + ex.what(), line_no);
    }
  }
  return table;
}

}  // namespace avcount
