#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "avcount/tensor.hpp"

namespace avcount::nn {

struct Parameter {
  Tensor value;
  Tensor grad;
  bool trainable = true;  // false for running statistics

  Parameter() = default;
  explicit Parameter(Tensor init, bool is_trainable = true)
      : value(std::move(init)), grad(Tensor::zeros_like(value)), trainable(is_trainable) {}
};

/// Flat, ordered view over the named parameters of a model. Does not own them.
class ParamSet {
 public:
  void add(std::string name, Parameter& p);
  void append(const ParamSet& other);

  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<std::pair<std::string, Parameter*>>& entries() const noexcept { return entries_; }
  Parameter* find(const std::string& name) const;

  void zero_grad();
  double grad_norm() const;
  std::size_t trainable_count() const;

  /// Binary checkpoint. Loading requires identical names and shapes.
  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, Parameter*>> entries_;
};

struct SgdConfig {
  double learning_rate = 1e-4;
  double momentum = 0.0;
  double weight_decay = 0.0;
  double clip_grad_norm = 0.0;  // 0 disables clipping
};

/// Plain SGD (optionally with momentum) over the trainable entries of a ParamSet.
class Sgd {
 public:
  Sgd(ParamSet params, SgdConfig config);
  void step();
  void zero_grad() { params_.zero_grad(); }
  const SgdConfig& config() const noexcept { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }

 private:
  ParamSet params_;
  SgdConfig config_;
  std::vector<Tensor> velocity_;
};

}  // namespace avcount::nn
