#include "avcount/counting_head.hpp"

#include <algorithm>
#include <cmath>

#include "avcount/errors.hpp"

namespace avcount {

void validate(const HeadConfig& config) {
  if (config.num_classes < 1) throw ConfigError("head needs at least one repetition class");
  if (config.feature_dim < 1) throw ConfigError("head feature_dim must be positive");
  if (config.lambda1 < 0.0 || config.lambda2 < 0.0) throw ConfigError("loss weights must be non-negative");
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double peak = logits.row(i).maxCoeff();
    double total = 0.0;
    for (Eigen::Index k = 0; k < logits.cols(); ++k) {
      out(i, k) = std::exp(logits(i, k) - peak);
      total += out(i, k);
    }
    out.row(i) /= total;
  }
  return out;
}

namespace {

HeadConfig checked(const HeadConfig& config) {
  validate(config);
  return config;
}

}  // namespace

CountingHead::CountingHead(HeadConfig config, std::mt19937_64& rng)
    : config_(checked(config)),
      count_fc_(config_.feature_dim, config_.num_classes),
      class_fc_(config_.feature_dim, config_.num_classes) {
  count_fc_.reset_uniform(rng, config_.init_scale);
  class_fc_.reset_uniform(rng, config_.init_scale);
}

std::vector<HeadOutput> CountingHead::forward(const Tensor& features, nn::Mode mode) {
  if (features.rank() != 2 || features.dim(1) != config_.feature_dim)
    throw ArgumentError("head expects [N, " + std::to_string(config_.feature_dim) + "] features, got " +
                        features.shape_string());
  if (!features.all_finite()) throw DomainError("non-finite feature passed to counting head");
  const Tensor counts = count_fc_.forward(features, mode);
  const Tensor logits = class_fc_.forward(features, mode);
  const int n = features.dim(0), p = config_.num_classes;
  counts_ = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(counts.data(), n, p);
  dists_ = softmax_rows(
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(logits.data(), n, p));

  std::vector<HeadOutput> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    HeadOutput& o = out[static_cast<std::size_t>(i)];
    o.per_class_counts.resize(static_cast<std::size_t>(p));
    o.class_dist.resize(static_cast<std::size_t>(p));
    for (int k = 0; k < p; ++k) {
      o.per_class_counts[static_cast<std::size_t>(k)] = counts_(i, k);
      o.class_dist[static_cast<std::size_t>(k)] = dists_(i, k);
      o.count += counts_(i, k) * dists_(i, k);
    }
  }
  return out;
}

HeadOutput CountingHead::forward_one(std::span<const double> feature) {
  Tensor x({1, static_cast<int>(feature.size())}, std::vector<double>(feature.begin(), feature.end()));
  return forward(x).front();
}

Tensor CountingHead::backward(std::span<const double> d_count, const Eigen::MatrixXd& d_class_dist) {
  const auto n = counts_.rows();
  const auto p = counts_.cols();
  if (static_cast<Eigen::Index>(d_count.size()) != n) throw ArgumentError("head backward: count gradient size");
  const bool has_dist_grad = d_class_dist.size() != 0;
  if (has_dist_grad && (d_class_dist.rows() != n || d_class_dist.cols() != p))
    throw ArgumentError("head backward: class-distribution gradient shape");

  Tensor d_counts({static_cast<int>(n), static_cast<int>(p)});
  Tensor d_logits({static_cast<int>(n), static_cast<int>(p)});
  for (Eigen::Index i = 0; i < n; ++i) {
    const double dc = d_count[static_cast<std::size_t>(i)];
    double dot = 0.0;
    std::vector<double> d_t(static_cast<std::size_t>(p));
    for (Eigen::Index k = 0; k < p; ++k) {
      d_counts[static_cast<std::size_t>(i * p + k)] = dc * dists_(i, k);
      d_t[static_cast<std::size_t>(k)] = dc * counts_(i, k) + (has_dist_grad ? d_class_dist(i, k) : 0.0);
      dot += d_t[static_cast<std::size_t>(k)] * dists_(i, k);
    }
    for (Eigen::Index k = 0; k < p; ++k)
      d_logits[static_cast<std::size_t>(i * p + k)] = dists_(i, k) * (d_t[static_cast<std::size_t>(k)] - dot);
  }
  Tensor d_features = count_fc_.backward(d_counts);
  d_features += class_fc_.backward(d_logits);
  return d_features;
}

void CountingHead::collect(nn::ParamSet& params, const std::string& prefix) {
  count_fc_.collect(params, prefix + ".count_fc");
  class_fc_.collect(params, prefix + ".class_fc");
}

namespace {

void check_dists(const Eigen::MatrixXd& class_dists) {
  if (class_dists.rows() < 1 || class_dists.cols() < 1) throw ArgumentError("empty class distribution batch");
  if ((class_dists.array() < 0.0).any()) throw DomainError("class distributions must be non-negative");
  if (!class_dists.allFinite()) throw DomainError("class distributions must be finite");
}

}  // namespace

double diversity_loss(const Eigen::MatrixXd& class_dists) {
  Eigen::MatrixXd unused;
  return diversity_loss(class_dists, unused);
}

double diversity_loss(const Eigen::MatrixXd& class_dists, Eigen::MatrixXd& grad) {
  check_dists(class_dists);
  const auto p = class_dists.cols();
  grad = Eigen::MatrixXd::Zero(class_dists.rows(), p);
  Eigen::VectorXd norms(p);
  for (Eigen::Index q = 0; q < p; ++q) norms(q) = class_dists.col(q).norm();

  double total = 0.0;
  for (Eigen::Index q = 0; q + 1 < p; ++q) {
    if (norms(q) == 0.0) continue;
    for (Eigen::Index j = q + 1; j < p; ++j) {
      if (norms(j) == 0.0) continue;
      const double nn = norms(q) * norms(j);
      const double cosine = class_dists.col(q).dot(class_dists.col(j)) / nn;
      total += cosine;
      grad.col(q) += class_dists.col(j) / nn - cosine * class_dists.col(q) / (norms(q) * norms(q));
      grad.col(j) += class_dists.col(q) / nn - cosine * class_dists.col(j) / (norms(j) * norms(j));
    }
  }
  return total;
}

double action_class_ce_loss(const Eigen::MatrixXd& class_dists, std::span<const int> action_labels) {
  Eigen::MatrixXd unused;
  return action_class_ce_loss(class_dists, action_labels, unused);
}

double action_class_ce_loss(const Eigen::MatrixXd& class_dists, std::span<const int> action_labels,
                            Eigen::MatrixXd& grad) {
  check_dists(class_dists);
  const auto n = class_dists.rows();
  if (static_cast<Eigen::Index>(action_labels.size()) != n)
    throw ArgumentError("action labels must align with the batch");
  constexpr double kFloor = 1e-300;
  grad = Eigen::MatrixXd::Zero(n, class_dists.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int label = action_labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= class_dists.cols())
      throw ArgumentError("action label " + std::to_string(label) + " outside [0, P)");
    const double t = std::max(class_dists(i, label), kFloor);
    total -= std::log(t);
    grad(i, label) = -1.0 / (t * static_cast<double>(n));
  }
  return total / static_cast<double>(n);
}

LossGrad counting_loss(std::span<const double> counts, std::span<const CountLabel> labels,
                       const Eigen::MatrixXd& class_dists, const HeadConfig& config,
                       std::span<const int> action_labels) {
  const std::size_t n = counts.size();
  if (n == 0) throw ArgumentError("counting loss needs a non-empty batch");
  if (labels.size() != n || static_cast<std::size_t>(class_dists.rows()) != n)
    throw ArgumentError("counting loss batch sizes disagree");

  LossGrad out;
  out.d_count.assign(n, 0.0);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double l = labels[i].value();
    if (!(l > 0.0)) throw DomainError("count label must be positive");
    const double diff = counts[i] - l;
    out.squared_term += diff * diff * inv_n;
    out.relative_term += std::abs(diff) / l * inv_n;
    const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    out.d_count[i] = inv_n * (2.0 * diff + config.lambda1 * sign / l);
  }

  Eigen::MatrixXd class_grad;
  if (config.supervision == Supervision::action_class_ce) {
    out.class_term = action_class_ce_loss(class_dists, action_labels, class_grad);
  } else {
    out.class_term = diversity_loss(class_dists, class_grad);
  }
  out.d_class_dist = config.lambda2 * class_grad;
  out.value = out.squared_term + config.lambda1 * out.relative_term + config.lambda2 * out.class_term;
  return out;
}

Eigen::MatrixXd stack_class_dists(std::span<const HeadOutput> outputs) {
  if (outputs.empty()) return {};
  const auto p = static_cast<Eigen::Index>(outputs.front().class_dist.size());
  Eigen::MatrixXd m(static_cast<Eigen::Index>(outputs.size()), p);
  for (std::size_t i = 0; i < outputs.size(); ++i)
    for (Eigen::Index k = 0; k < p; ++k) m(static_cast<Eigen::Index>(i), k) = outputs[i].class_dist[static_cast<std::size_t>(k)];
  return m;
}

}  // namespace avcount
