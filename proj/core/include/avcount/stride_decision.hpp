#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "avcount/nn/layers.hpp"
#include "avcount/sight_stream.hpp"

namespace avcount {

struct StrideModuleConfig {
  double margin = 2.9;
  double theta_s = 0.29;
  int s_k_train = 8;
  int s_k_infer = 5;
  bool audio_enabled = true;
};

void validate(const StrideModuleConfig& config);

/// Scores a temporal stride from the mid-level taps of both streams: one
/// residual block per modality, pooled, concatenated, one linear unit.
class StrideModule {
 public:
  /// audio_channels is ignored when audio is disabled.
  StrideModule(int visual_channels, int audio_channels, StrideModuleConfig config, std::mt19937_64& rng);

  const StrideModuleConfig& config() const noexcept { return config_; }
  bool audio_enabled() const noexcept { return config_.audio_enabled; }

  /// visual_mid: [N, Cv, D, H, W]; audio_mid: [N, Ca, 1, H, W] or null in visual-only mode.
  std::vector<double> forward(const Tensor& visual_mid, const Tensor* audio_mid, nn::Mode mode);
  void backward(std::span<const double> d_scores);

  double score_stride(const Tensor& visual_mid, const Tensor* audio_mid);

  nn::ParamSet params();
  void zero_parameters() { nn::zero_trainable(params()); }
  void estimate_batch_norm(const std::function<void()>& feed) {
    nn::estimate_batch_norm({&visual_branch_, &audio_branch_}, feed);
  }
  void save(const std::filesystem::path& path) { params().save(path); }
  void load(const std::filesystem::path& path) { params().load(path); }

 private:
  StrideModuleConfig config_;
  int visual_channels_;
  int audio_channels_;
  nn::Sequential visual_branch_;
  nn::Sequential audio_branch_;
  nn::Linear fc_;
};

struct RankingLoss {
  double value = 0.0;
  std::vector<double> d_neg;
  std::vector<double> d_pos;
};

/// (1/N) sum max(0, neg_i - pos_i + margin).
double ranking_loss(std::span<const double> neg_scores, std::span<const double> pos_scores, double margin);
RankingLoss ranking_loss_grad(std::span<const double> neg_scores, std::span<const double> pos_scores, double margin);

/// (clip_len - 1) * stride >= 2 * mean_period.
bool covers_two_repetitions(int stride, int clip_len, double mean_period);

struct StrideMiningResult {
  std::string video_id;
  bool usable = false;  // false when no candidate stride covers two repetitions
  int positive_stride = 0;
  std::set<int> negative_strides;
  std::map<int, double> per_stride_counts;
  std::map<int, double> deviations;  // (C* - C^s) / C*
};

/// Mining from precomputed per-stride counts (keys 1..S_K).
StrideMiningResult mine_from_counts(double mean_period, int clip_len, const std::map<int, double>& per_stride_counts,
                                    const StrideModuleConfig& config);

/// Counts the video at strides 1..s_k_train with the trained sight model and
/// mines positive/negative strides. `first_clip_features`, when given,
/// receives the first-clip features per stride (index stride - 1).
StrideMiningResult mine_strides(const VideoSource& video, const SegmentFrames& segment, double mean_period,
                                SightModel& sight, const StrideModuleConfig& config,
                                std::vector<VisualFeatures>* first_clip_features = nullptr);

/// Argmax of scores[stride - 1]; ties resolve to the smaller stride.
int argmax_stride(std::span<const double> scores);

struct StrideChoice {
  int stride = 1;
  double score = 0.0;
  std::vector<double> scores;
  VisualFeatures features;  // first clip at the chosen stride
};

/// Scores the first clip at each stride 1..s_k_infer. With `fixed_stride`
/// the scorer is bypassed and `module` may be null.
StrideChoice select_stride(const VideoSource& video, const SegmentFrames& segment, SightModel& sight,
                           const Tensor* audio_mid, StrideModule* module, std::optional<int> fixed_stride = {});

void save_mining(const std::filesystem::path& path, std::span<const StrideMiningResult> results);
std::vector<StrideMiningResult> load_mining(const std::filesystem::path& path);

}  // namespace avcount
