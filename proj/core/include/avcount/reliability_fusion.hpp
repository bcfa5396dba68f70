#pragma once

#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "avcount/nn/layers.hpp"
#include "avcount/types.hpp"

namespace avcount {

struct ReliabilityConfig {
  double theta_r_v = 0.36;
  double theta_r_a = 0.40;
  int epochs = 20;
  double learning_rate = 1e-4;
  int batch_size = 8;
};

void validate(const ReliabilityConfig& config);

/// Confidence gamma of the sound modality from the visual feature and the
/// audio mid-level tap (one residual block, pooled, concatenated, one unit, sigmoid).
class ReliabilityGate {
 public:
  ReliabilityGate(int visual_feature_dim, int audio_channels, std::mt19937_64& rng);

  /// visual: [N, F]; audio_mid: [N, Ca, 1, H, W]. Returns gamma per sample.
  std::vector<double> forward(const Tensor& visual, const Tensor& audio_mid, nn::Mode mode);
  /// d_gamma: dL/dgamma per sample of the last forward.
  void backward(std::span<const double> d_gamma);

  double gamma(std::span<const double> visual_feature, const Tensor& audio_mid);

  nn::ParamSet params();
  void zero_parameters() { nn::zero_trainable(params()); }
  void estimate_batch_norm(const std::function<void()>& feed) { nn::estimate_batch_norm({&audio_branch_}, feed); }
  void save(const std::filesystem::path& path) { params().save(path); }
  void load(const std::filesystem::path& path) { params().load(path); }

 private:
  int visual_dim_;
  int audio_channels_;
  nn::Sequential audio_branch_;
  nn::Linear fc_;
  std::vector<double> gammas_;
};

/// c_v (1 - gamma) + c_a gamma.
CountPrediction fuse(const CountPrediction& c_v, const CountPrediction& c_a, double gamma);

/// (1/N) sum |C_i - l_i| / l_i.
double reliability_loss(std::span<const double> fused, std::span<const CountLabel> labels);

struct GateLoss {
  double value = 0.0;
  std::vector<double> d_gamma;
};

/// Reliability loss of c_v (1 - gamma) + c_a gamma and its gradient in gamma.
GateLoss gate_loss(std::span<const double> gammas, std::span<const double> c_v, std::span<const double> c_a,
                   std::span<const CountLabel> labels);

/// One stream-training epoch as seen by the empirical-prediction collector.
struct EpochPredictions {
  double val_relative_mae = 0.0;
  std::map<std::string, double> train_predictions;
};

struct EmpiricalEntry {
  double avg_sight_pred = 0.0;
  double avg_sound_pred = 0.0;
  int n_recordings_v = 0;
  int n_recordings_a = 0;
  bool fallback_v = false;
  bool fallback_a = false;
};

using EmpiricalPredictionTable = std::map<std::string, EmpiricalEntry>;

struct StreamAverage {
  std::map<std::string, double> average;
  std::map<std::string, int> recordings;
  bool fallback = false;
};

/// Averages the per-video predictions of epochs whose validation relative-MAE
/// is below theta; without any such epoch, `final_predictions` are used and
/// the fallback flag is set.
StreamAverage average_qualifying(std::span<const EpochPredictions> epochs, double theta,
                                 const std::map<std::string, double>& final_predictions);

EmpiricalPredictionTable collect_empirical_predictions(std::span<const EpochPredictions> sight_epochs,
                                                       const std::map<std::string, double>& sight_final,
                                                       std::span<const EpochPredictions> sound_epochs,
                                                       const std::map<std::string, double>& sound_final,
                                                       const ReliabilityConfig& config);

void save_empirical_table(const std::filesystem::path& path, const EmpiricalPredictionTable& table);
EmpiricalPredictionTable load_empirical_table(const std::filesystem::path& path);

}  // namespace avcount
