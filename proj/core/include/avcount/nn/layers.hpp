#pragma once

#include <array>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "avcount/nn/params.hpp"
#include "avcount/tensor.hpp"

namespace avcount::nn {

enum class Mode { train, eval };

using Triple = std::array<int, 3>;  // (depth, height, width)

/// Differentiable building block. `forward` caches what `backward` needs, so a
/// layer instance handles one forward/backward pair at a time.
class Layer {
 public:
  virtual ~Layer() = default;
  Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  /// Accumulates parameter gradients and returns the gradient w.r.t. the input.
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void collect(ParamSet& /*params*/, const std::string& /*prefix*/) {}
  virtual void reset_parameters(std::mt19937_64& /*rng*/) {}
  /// Calls `fn` on this layer and every nested layer.
  virtual void visit(const std::function<void(Layer&)>& fn) { fn(*this); }
};

struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  Triple kernel{3, 3, 3};
  Triple stride{1, 1, 1};
  Triple padding{1, 1, 1};
  bool bias = true;
};

/// 3D convolution over [N, C, D, H, W] via im2col + GEMM. A kernel depth of 1
/// gives a 2D convolution applied independently to each depth slice.
class Conv3d final : public Layer {
 public:
  explicit Conv3d(ConvSpec spec);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(ParamSet& params, const std::string& prefix) override;
  void reset_parameters(std::mt19937_64& rng) override;

  const ConvSpec& spec() const noexcept { return spec_; }
  Triple output_extent(const Triple& input) const;
  Parameter& weight() noexcept { return weight_; }
  Parameter& bias() noexcept { return bias_; }

 private:
  ConvSpec spec_;
  int patch_size_;
  Parameter weight_;  // [out, in * kd * kh * kw]
  Parameter bias_;    // [out]
  Tensor::Shape input_shape_;
  std::vector<Eigen::MatrixXd> cols_;
};

/// Per-channel batch normalization over (N, D, H, W).
class BatchNorm final : public Layer {
 public:
  explicit BatchNorm(int channels, double momentum = 0.1, double eps = 1e-5);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(ParamSet& params, const std::string& prefix) override;
  void reset_parameters(std::mt19937_64& rng) override;

  /// While estimating, train-mode forwards replace the running statistics by
  /// the plain average over all batches seen since begin_estimate().
  void begin_estimate();
  void end_estimate() { estimating_ = false; }

 private:
  int channels_;
  double momentum_;
  bool estimating_ = false;
  long estimate_batches_ = 0;
  double eps_;
  Parameter gamma_, beta_, running_mean_, running_var_;
  Mode last_mode_ = Mode::eval;
  Tensor x_hat_;
  std::vector<double> inv_std_;
};

class ReLU final : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  std::vector<bool> mask_;
  Tensor::Shape shape_;
};

enum class PoolKind { max, average };

/// Windowed pooling over (D, H, W). Average pooling divides by the number of
/// in-bounds taps.
class Pool3d final : public Layer {
 public:
  Pool3d(PoolKind kind, Triple kernel, Triple stride, Triple padding = {0, 0, 0});

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  Triple output_extent(const Triple& input) const;

 private:
  PoolKind kind_;
  Triple kernel_, stride_, padding_;
  Tensor::Shape input_shape_;
  std::vector<std::size_t> argmax_;   // max pooling: source index per output
  std::vector<int> tap_count_;        // average pooling: divisor per output
};

/// [N, C, D, H, W] -> [N, C].
class GlobalAvgPool final : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor::Shape input_shape_;
};

/// [N, in] -> [N, out].
class Linear final : public Layer {
 public:
  Linear(int in_features, int out_features);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(ParamSet& params, const std::string& prefix) override;
  void reset_parameters(std::mt19937_64& rng) override;
  /// U(-bound, bound) for weights and bias.
  void reset_uniform(std::mt19937_64& rng, double bound);

  int in_features() const noexcept { return in_; }
  int out_features() const noexcept { return out_; }
  Parameter& weight() noexcept { return weight_; }
  Parameter& bias() noexcept { return bias_; }

 private:
  int in_, out_;
  Parameter weight_;  // [out, in]
  Parameter bias_;    // [out]
  Tensor input_;
};

class Sequential final : public Layer {
 public:
  Sequential() = default;

  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }
  void push(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(ParamSet& params, const std::string& prefix) override;
  void reset_parameters(std::mt19937_64& rng) override;
  void visit(const std::function<void(Layer&)>& fn) override;

  std::size_t size() const noexcept { return layers_.size(); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// conv-bn-relu-conv-bn plus identity (or 1x1 projection) shortcut, then relu.
class ResidualBlock final : public Layer {
 public:
  ResidualBlock(int in_channels, int out_channels, Triple kernel, Triple stride);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(ParamSet& params, const std::string& prefix) override;
  void reset_parameters(std::mt19937_64& rng) override;
  void visit(const std::function<void(Layer&)>& fn) override;

 private:
  Conv3d conv1_;
  BatchNorm bn1_;
  ReLU relu1_;
  Conv3d conv2_;
  BatchNorm bn2_;
  std::unique_ptr<Conv3d> proj_;
  std::unique_ptr<BatchNorm> proj_bn_;
  ReLU relu_out_;
};

/// Re-estimates the running statistics of every BatchNorm under `roots` from
/// the train-mode forwards issued by `feed`. Parameters are left untouched.
void estimate_batch_norm(const std::vector<Layer*>& roots, const std::function<void()>& feed);

/// Sets every trainable parameter of `params` to zero.
void zero_trainable(const ParamSet& params);

Triple same_padding(const Triple& kernel);

/// [N, A] and [N, B] joined into [N, A + B].
Tensor concat_columns(const Tensor& a, const Tensor& b);
/// Inverse of concat_columns: the first `left` columns and the rest.
std::pair<Tensor, Tensor> split_columns(const Tensor& x, int left);

}  // namespace avcount::nn
