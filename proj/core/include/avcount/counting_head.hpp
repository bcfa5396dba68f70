#pragma once

#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "avcount/nn/layers.hpp"
#include "avcount/types.hpp"

namespace avcount {

enum class Supervision { diversity, action_class_ce };

struct HeadConfig {
  int feature_dim = 512;
  int num_classes = 41;  // P
  double lambda1 = 10.0;
  double lambda2 = 10.0;
  Supervision supervision = Supervision::diversity;
  double init_scale = 0.01;  // U(-s, s) for both fully connected layers
};

void validate(const HeadConfig& config);

struct HeadOutput {
  std::vector<double> per_class_counts;  // C', length P
  std::vector<double> class_dist;        // T = softmax(logits), length P
  double count = 0.0;                    // C = sum_k C'(k) T(k), unclamped
};

/// Row-wise softmax of an [N, P] matrix.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

/// Two fully connected branches over a shared feature: per-repetition-class
/// counts and a repetition-class distribution, mixed into one count.
class CountingHead {
 public:
  CountingHead(HeadConfig config, std::mt19937_64& rng);

  const HeadConfig& config() const noexcept { return config_; }

  /// features: [N, feature_dim].
  std::vector<HeadOutput> forward(const Tensor& features, nn::Mode mode = nn::Mode::eval);
  HeadOutput forward_one(std::span<const double> feature);

  /// Gradients of a scalar loss w.r.t. each sample's count and class
  /// distribution; returns the gradient w.r.t. the features of the last forward.
  Tensor backward(std::span<const double> d_count, const Eigen::MatrixXd& d_class_dist);

  void collect(nn::ParamSet& params, const std::string& prefix);
  nn::Linear& count_branch() noexcept { return count_fc_; }
  nn::Linear& class_branch() noexcept { return class_fc_; }

 private:
  HeadConfig config_;
  nn::Linear count_fc_;
  nn::Linear class_fc_;
  Eigen::MatrixXd counts_;  // cached C' [N, P]
  Eigen::MatrixXd dists_;   // cached T  [N, P]
};

/// Value and gradients of a batch loss over head outputs.
struct LossGrad {
  double value = 0.0;
  std::vector<double> d_count;     // dL/dC_i
  Eigen::MatrixXd d_class_dist;    // dL/dT_ik, [N, P]
  double squared_term = 0.0;       // (1/N) sum (C - l)^2
  double relative_term = 0.0;      // (1/N) sum |C - l| / l
  double class_term = 0.0;         // diversity or cross-entropy value before lambda2
};

/// Sum over class-unit pairs q < j of the cosine similarity between columns
/// T[:, q] and T[:, j] (each a length-N vector across the batch). Columns with
/// zero norm contribute zero.
double diversity_loss(const Eigen::MatrixXd& class_dists);
/// Same value plus dL/dT.
double diversity_loss(const Eigen::MatrixXd& class_dists, Eigen::MatrixXd& grad);

/// Mean cross-entropy -ln T_i[label_i].
double action_class_ce_loss(const Eigen::MatrixXd& class_dists, std::span<const int> action_labels);
double action_class_ce_loss(const Eigen::MatrixXd& class_dists, std::span<const int> action_labels,
                            Eigen::MatrixXd& grad);

/// (1/N) sum [(C_i - l_i)^2 + lambda1 |C_i - l_i| / l_i] + lambda2 * class term,
/// where the class term is the batch diversity loss, or the mean action-class
/// cross-entropy under Supervision::action_class_ce.
LossGrad counting_loss(std::span<const double> counts, std::span<const CountLabel> labels,
                       const Eigen::MatrixXd& class_dists, const HeadConfig& config,
                       std::span<const int> action_labels = {});

Eigen::MatrixXd stack_class_dists(std::span<const HeadOutput> outputs);

}  // namespace avcount
