#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <vector>

#include "avcount/counting_head.hpp"
#include "avcount/nn/layers.hpp"
#include "avcount/nn/params.hpp"
#include "avcount/types.hpp"

namespace avcount {

/// Stack of stages ending in global average pooling. The output of stage
/// `tap_stage` (0-based) is exported as the mid-level feature map used by the
/// cross-modal modules.
class Backbone {
 public:
  struct Output {
    Tensor feature;  // [N, feature_dim]
    Tensor mid;      // [N, C, D, H, W] at the tap
  };

  Backbone(std::vector<std::unique_ptr<nn::Sequential>> stages, std::size_t tap_stage, int feature_dim);

  Output forward(const Tensor& x, nn::Mode mode);
  /// Backpropagates from the pooled feature; gradients reach every stage parameter.
  void backward(const Tensor& d_feature);

  void collect(nn::ParamSet& params, const std::string& prefix);
  void reset_parameters(std::mt19937_64& rng);
  std::vector<nn::Layer*> layers();

  int feature_dim() const noexcept { return feature_dim_; }
  std::size_t tap_stage() const noexcept { return tap_stage_; }
  std::size_t num_stages() const noexcept { return stages_.size(); }

 private:
  std::vector<std::unique_ptr<nn::Sequential>> stages_;
  std::size_t tap_stage_;
  int feature_dim_;
  std::unique_ptr<nn::GlobalAvgPool> pool_ = std::make_unique<nn::GlobalAvgPool>();
};

/// Backbone followed by the two-branch counting head; shared by both streams.
class StreamModel {
 public:
  struct Batch {
    Tensor features;
    Tensor mid;
    std::vector<HeadOutput> heads;
  };

  StreamModel(Modality modality, Backbone backbone, HeadConfig head, std::mt19937_64& rng);

  Modality modality() const noexcept { return modality_; }
  Batch forward(const Tensor& input, nn::Mode mode);
  void backward(const LossGrad& loss);

  nn::ParamSet params();
  void zero_parameters();
  /// Replaces the normalization statistics by averages over the train-mode
  /// forwards issued by `feed`.
  void estimate_batch_norm(const std::function<void()>& feed) { nn::estimate_batch_norm(backbone_.layers(), feed); }
  void save(const std::filesystem::path& path);
  void load(const std::filesystem::path& path);

  Backbone& backbone() noexcept { return backbone_; }
  CountingHead& head() noexcept { return head_; }
  const HeadConfig& head_config() const noexcept { return head_.config(); }

 private:
  Modality modality_;
  Backbone backbone_;
  CountingHead head_;
};

}  // namespace avcount
