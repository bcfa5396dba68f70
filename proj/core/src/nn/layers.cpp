#include "avcount/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>

#include "avcount/errors.hpp"

namespace avcount::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_rank5(const Tensor& x, const char* who) {
  if (x.rank() != 5) throw ArgumentError(std::string(who) + " expects [N, C, D, H, W], got " + x.shape_string());
}

int extent(int in, int k, int s, int p) {
  const int span = in + 2 * p - k;
  if (span < 0) throw ArgumentError("kernel larger than padded input");
  return span / s + 1;
}

void uniform_fill(Tensor& t, std::mt19937_64& rng, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.values()) v = dist(rng);
}

}  // namespace

Triple same_padding(const Triple& kernel) { return {kernel[0] / 2, kernel[1] / 2, kernel[2] / 2}; }

Tensor concat_columns(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
    throw ArgumentError("cannot concatenate " + a.shape_string() + " and " + b.shape_string());
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  Tensor out({n, ca + cb});
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.data() + static_cast<std::size_t>(i) * ca, ca, out.data() + static_cast<std::size_t>(i) * (ca + cb));
    std::copy_n(b.data() + static_cast<std::size_t>(i) * cb, cb,
                out.data() + static_cast<std::size_t>(i) * (ca + cb) + ca);
  }
  return out;
}

std::pair<Tensor, Tensor> split_columns(const Tensor& x, int left) {
  if (x.rank() != 2 || left < 0 || left > x.dim(1)) throw ArgumentError("bad column split of " + x.shape_string());
  const int n = x.dim(0), c = x.dim(1), right = c - left;
  Tensor a({n, left}), b({n, right});
  for (int i = 0; i < n; ++i) {
    const double* row = x.data() + static_cast<std::size_t>(i) * c;
    std::copy_n(row, left, a.data() + static_cast<std::size_t>(i) * left);
    std::copy_n(row + left, right, b.data() + static_cast<std::size_t>(i) * right);
  }
  return {std::move(a), std::move(b)};
}

void estimate_batch_norm(const std::vector<Layer*>& roots, const std::function<void()>& feed) {
  std::vector<BatchNorm*> norms;
  for (Layer* root : roots)
    root->visit([&](Layer& l) {
      if (auto* bn = dynamic_cast<BatchNorm*>(&l)) norms.push_back(bn);
    });
  for (BatchNorm* bn : norms) bn->begin_estimate();
  try {
    feed();
  } catch (...) {
    for (BatchNorm* bn : norms) bn->end_estimate();
    throw;
  }
  for (BatchNorm* bn : norms) bn->end_estimate();
}

void zero_trainable(const ParamSet& params) {
  for (const auto& [name, p] : params.entries())
    if (p->trainable) p->value.fill(0.0);
}

// ---------------------------------------------------------------------------
// Conv3d
// ---------------------------------------------------------------------------

Conv3d::Conv3d(ConvSpec spec)
    : spec_(spec),
      patch_size_(spec.in_channels * spec.kernel[0] * spec.kernel[1] * spec.kernel[2]),
      weight_(Tensor({spec.out_channels, spec.in_channels * spec.kernel[0] * spec.kernel[1] * spec.kernel[2]})),
      bias_(Tensor({spec.out_channels})) {
  if (spec.in_channels < 1 || spec.out_channels < 1) throw ArgumentError("conv channels must be positive");
  for (int i = 0; i < 3; ++i)
    if (spec.kernel[i] < 1 || spec.stride[i] < 1 || spec.padding[i] < 0) throw ArgumentError("bad conv geometry");
}

Triple Conv3d::output_extent(const Triple& in) const {
  return {extent(in[0], spec_.kernel[0], spec_.stride[0], spec_.padding[0]),
          extent(in[1], spec_.kernel[1], spec_.stride[1], spec_.padding[1]),
          extent(in[2], spec_.kernel[2], spec_.stride[2], spec_.padding[2])};
}

Tensor Conv3d::forward(const Tensor& x, Mode /*mode*/) {
  require_rank5(x, "Conv3d");
  if (x.dim(1) != spec_.in_channels)
    throw ArgumentError("Conv3d expects " + std::to_string(spec_.in_channels) + " channels, got " + x.shape_string());
  const int n_batch = x.dim(0), cin = x.dim(1), din = x.dim(2), hin = x.dim(3), win = x.dim(4);
  const auto [od, oh, ow] = output_extent({din, hin, win});
  const int cout = spec_.out_channels;
  const int positions = od * oh * ow;
  const auto [kd, kh, kw] = spec_.kernel;
  const auto [sd, sh, sw] = spec_.stride;
  const auto [pd, ph, pw] = spec_.padding;

  input_shape_ = x.shape();
  cols_.resize(static_cast<std::size_t>(n_batch));
  Tensor out({n_batch, cout, od, oh, ow});
  Eigen::Map<const RowMat> w(weight_.value.data(), cout, patch_size_);
  Eigen::Map<const Eigen::VectorXd> b(bias_.value.data(), cout);
  const std::size_t in_step = x.stride0();

  for (int n = 0; n < n_batch; ++n) {
    const double* src = x.data() + in_step * static_cast<std::size_t>(n);
    Eigen::MatrixXd& col = cols_[static_cast<std::size_t>(n)];
    col.resize(patch_size_, positions);
    double* cp = col.data();
    for (int zd = 0; zd < od; ++zd) {
      for (int zh = 0; zh < oh; ++zh) {
        for (int zw = 0; zw < ow; ++zw) {
          const int d0 = zd * sd - pd, h0 = zh * sh - ph, w0 = zw * sw - pw;
          for (int c = 0; c < cin; ++c) {
            const double* plane = src + static_cast<std::size_t>(c) * din * hin * win;
            for (int a = 0; a < kd; ++a) {
              const int id = d0 + a;
              const bool d_ok = id >= 0 && id < din;
              for (int e = 0; e < kh; ++e) {
                const int ih = h0 + e;
                const bool h_ok = d_ok && ih >= 0 && ih < hin;
                const double* row = h_ok ? plane + (static_cast<std::size_t>(id) * hin + ih) * win : nullptr;
                for (int f = 0; f < kw; ++f) {
                  const int iw = w0 + f;
                  *cp++ = (h_ok && iw >= 0 && iw < win) ? row[iw] : 0.0;
                }
              }
            }
          }
        }
      }
    }
    Eigen::Map<RowMat> y(out.data() + static_cast<std::size_t>(n) * cout * positions, cout, positions);
    y.noalias() = w * col;
    if (spec_.bias) y.colwise() += b;
  }
  return out;
}

Tensor Conv3d::backward(const Tensor& grad_out) {
  if (input_shape_.empty()) throw ArgumentError("Conv3d::backward before forward");
  const int n_batch = input_shape_[0], cin = input_shape_[1], din = input_shape_[2], hin = input_shape_[3],
            win = input_shape_[4];
  const auto [od, oh, ow] = output_extent({din, hin, win});
  const int cout = spec_.out_channels;
  const int positions = od * oh * ow;
  if (grad_out.shape() != Tensor::Shape{n_batch, cout, od, oh, ow})
    throw ArgumentError("Conv3d::backward gradient shape " + grad_out.shape_string());
  const auto [kd, kh, kw] = spec_.kernel;
  const auto [sd, sh, sw] = spec_.stride;
  const auto [pd, ph, pw] = spec_.padding;

  Eigen::Map<const RowMat> w(weight_.value.data(), cout, patch_size_);
  Eigen::Map<RowMat> dw(weight_.grad.data(), cout, patch_size_);
  Eigen::Map<Eigen::VectorXd> db(bias_.grad.data(), cout);
  Tensor grad_in(input_shape_);
  const std::size_t in_step = grad_in.stride0();
  Eigen::MatrixXd dcol(patch_size_, positions);

  for (int n = 0; n < n_batch; ++n) {
    Eigen::Map<const RowMat> dy(grad_out.data() + static_cast<std::size_t>(n) * cout * positions, cout, positions);
    const Eigen::MatrixXd& col = cols_[static_cast<std::size_t>(n)];
    dw.noalias() += dy * col.transpose();
    if (spec_.bias) db += dy.rowwise().sum();
    dcol.noalias() = w.transpose() * dy;

    double* dst = grad_in.data() + in_step * static_cast<std::size_t>(n);
    const double* cp = dcol.data();
    for (int zd = 0; zd < od; ++zd) {
      for (int zh = 0; zh < oh; ++zh) {
        for (int zw = 0; zw < ow; ++zw) {
          const int d0 = zd * sd - pd, h0 = zh * sh - ph, w0 = zw * sw - pw;
          for (int c = 0; c < cin; ++c) {
            double* plane = dst + static_cast<std::size_t>(c) * din * hin * win;
            for (int a = 0; a < kd; ++a) {
              const int id = d0 + a;
              const bool d_ok = id >= 0 && id < din;
              for (int e = 0; e < kh; ++e) {
                const int ih = h0 + e;
                const bool h_ok = d_ok && ih >= 0 && ih < hin;
                double* row = h_ok ? plane + (static_cast<std::size_t>(id) * hin + ih) * win : nullptr;
                for (int f = 0; f < kw; ++f, ++cp) {
                  const int iw = w0 + f;
                  if (h_ok && iw >= 0 && iw < win) row[iw] += *cp;
                }
              }
            }
          }
        }
      }
    }
  }
  return grad_in;
}

void Conv3d::collect(ParamSet& params, const std::string& prefix) {
  params.add(prefix + ".weight", weight_);
  if (spec_.bias) params.add(prefix + ".bias", bias_);
}

void Conv3d::reset_parameters(std::mt19937_64& rng) {
  uniform_fill(weight_.value, rng, std::sqrt(6.0 / patch_size_));
  bias_.value.fill(0.0);
}

// ---------------------------------------------------------------------------
// BatchNorm
// ---------------------------------------------------------------------------

BatchNorm::BatchNorm(int channels, double momentum, double eps)
    : channels_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_(Tensor({channels}, 1.0)),
      beta_(Tensor({channels}, 0.0)),
      running_mean_(Tensor({channels}, 0.0), false),
      running_var_(Tensor({channels}, 1.0), false) {
  if (channels < 1) throw ArgumentError("BatchNorm channels must be positive");
}

Tensor BatchNorm::forward(const Tensor& x, Mode mode) {
  if (x.rank() < 2 || x.dim(1) != channels_) throw ArgumentError("BatchNorm channel mismatch: " + x.shape_string());
  const int n_batch = x.dim(0);
  const std::size_t spatial = x.size() / (static_cast<std::size_t>(n_batch) * channels_);
  const double count = static_cast<double>(n_batch) * static_cast<double>(spatial);
  last_mode_ = mode;
  x_hat_ = Tensor(x.shape());
  inv_std_.assign(static_cast<std::size_t>(channels_), 0.0);
  Tensor y(x.shape());

  auto offset = [&](int n, int c) { return (static_cast<std::size_t>(n) * channels_ + c) * spatial; };
  for (int c = 0; c < channels_; ++c) {
    double mean = 0.0, var = 0.0;
    if (mode == Mode::train) {
      for (int n = 0; n < n_batch; ++n) {
        const double* p = x.data() + offset(n, c);
        for (std::size_t i = 0; i < spatial; ++i) mean += p[i];
      }
      mean /= count;
      for (int n = 0; n < n_batch; ++n) {
        const double* p = x.data() + offset(n, c);
        for (std::size_t i = 0; i < spatial; ++i) var += (p[i] - mean) * (p[i] - mean);
      }
      var /= count;
      const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
      const double m = estimating_ ? 1.0 / static_cast<double>(estimate_batches_ + 1) : momentum_;
      running_mean_.value[c] = (1.0 - m) * running_mean_.value[c] + m * mean;
      running_var_.value[c] = (1.0 - m) * running_var_.value[c] + m * unbiased;
    } else {
      mean = running_mean_.value[c];
      var = running_var_.value[c];
    }
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[static_cast<std::size_t>(c)] = inv;
    const double g = gamma_.value[c], b = beta_.value[c];
    for (int n = 0; n < n_batch; ++n) {
      const std::size_t o = offset(n, c);
      for (std::size_t i = 0; i < spatial; ++i) {
        const double xh = (x[o + i] - mean) * inv;
        x_hat_[o + i] = xh;
        y[o + i] = g * xh + b;
      }
    }
  }
  if (mode == Mode::train && estimating_) ++estimate_batches_;
  return y;
}

void BatchNorm::begin_estimate() {
  estimating_ = true;
  estimate_batches_ = 0;
}

Tensor BatchNorm::backward(const Tensor& grad_out) {
  if (grad_out.shape() != x_hat_.shape()) throw ArgumentError("BatchNorm::backward shape mismatch");
  const int n_batch = grad_out.dim(0);
  const std::size_t spatial = grad_out.size() / (static_cast<std::size_t>(n_batch) * channels_);
  const double count = static_cast<double>(n_batch) * static_cast<double>(spatial);
  Tensor grad_in(grad_out.shape());
  auto offset = [&](int n, int c) { return (static_cast<std::size_t>(n) * channels_ + c) * spatial; };

  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (int n = 0; n < n_batch; ++n) {
      const std::size_t o = offset(n, c);
      for (std::size_t i = 0; i < spatial; ++i) {
        sum_dy += grad_out[o + i];
        sum_dy_xh += grad_out[o + i] * x_hat_[o + i];
      }
    }
    gamma_.grad[c] += sum_dy_xh;
    beta_.grad[c] += sum_dy;
    const double g = gamma_.value[c];
    const double inv = inv_std_[static_cast<std::size_t>(c)];
    for (int n = 0; n < n_batch; ++n) {
      const std::size_t o = offset(n, c);
      for (std::size_t i = 0; i < spatial; ++i) {
        if (last_mode_ == Mode::train) {
          grad_in[o + i] = g * inv / count * (count * grad_out[o + i] - sum_dy - x_hat_[o + i] * sum_dy_xh);
        } else {
          grad_in[o + i] = g * inv * grad_out[o + i];
        }
      }
    }
  }
  return grad_in;
}

void BatchNorm::collect(ParamSet& params, const std::string& prefix) {
  params.add(prefix + ".gamma", gamma_);
  params.add(prefix + ".beta", beta_);
  params.add(prefix + ".running_mean", running_mean_);
  params.add(prefix + ".running_var", running_var_);
}

void BatchNorm::reset_parameters(std::mt19937_64& /*rng*/) {
  gamma_.value.fill(1.0);
  beta_.value.fill(0.0);
  running_mean_.value.fill(0.0);
  running_var_.value.fill(1.0);
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

Tensor ReLU::forward(const Tensor& x, Mode /*mode*/) {
  shape_ = x.shape();
  mask_.assign(x.size(), false);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] > 0.0) {
      y[i] = x[i];
      mask_[i] = true;
    }
  }
  return y;
}

Tensor ReLU::backward(const Tensor& grad_out) {
  if (grad_out.shape() != shape_) throw ArgumentError("ReLU::backward shape mismatch");
  Tensor g(shape_);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = mask_[i] ? grad_out[i] : 0.0;
  return g;
}

// ---------------------------------------------------------------------------
// Pool3d
// ---------------------------------------------------------------------------

Pool3d::Pool3d(PoolKind kind, Triple kernel, Triple stride, Triple padding)
    : kind_(kind), kernel_(kernel), stride_(stride), padding_(padding) {
  for (int i = 0; i < 3; ++i) {
    if (kernel[i] < 1 || stride[i] < 1 || padding[i] < 0 || padding[i] >= kernel[i])
      throw ArgumentError("bad pooling geometry");
  }
}

Triple Pool3d::output_extent(const Triple& in) const {
  return {extent(in[0], kernel_[0], stride_[0], padding_[0]), extent(in[1], kernel_[1], stride_[1], padding_[1]),
          extent(in[2], kernel_[2], stride_[2], padding_[2])};
}

Tensor Pool3d::forward(const Tensor& x, Mode /*mode*/) {
  require_rank5(x, "Pool3d");
  input_shape_ = x.shape();
  const int n_batch = x.dim(0), ch = x.dim(1), din = x.dim(2), hin = x.dim(3), win = x.dim(4);
  const auto [od, oh, ow] = output_extent({din, hin, win});
  Tensor y({n_batch, ch, od, oh, ow});
  argmax_.assign(y.size(), 0);
  tap_count_.assign(y.size(), 0);
  std::size_t o = 0;
  for (int n = 0; n < n_batch; ++n) {
    for (int c = 0; c < ch; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * ch + c) * din * hin * win;
      for (int zd = 0; zd < od; ++zd) {
        for (int zh = 0; zh < oh; ++zh) {
          for (int zw = 0; zw < ow; ++zw, ++o) {
            double best = -std::numeric_limits<double>::infinity();
            double sum = 0.0;
            int taps = 0;
            std::size_t best_idx = 0;
            for (int a = 0; a < kernel_[0]; ++a) {
              const int id = zd * stride_[0] - padding_[0] + a;
              if (id < 0 || id >= din) continue;
              for (int e = 0; e < kernel_[1]; ++e) {
                const int ih = zh * stride_[1] - padding_[1] + e;
                if (ih < 0 || ih >= hin) continue;
                for (int f = 0; f < kernel_[2]; ++f) {
                  const int iw = zw * stride_[2] - padding_[2] + f;
                  if (iw < 0 || iw >= win) continue;
                  const std::size_t idx = base + (static_cast<std::size_t>(id) * hin + ih) * win + iw;
                  const double v = x[idx];
                  sum += v;
                  ++taps;
                  if (v > best) {
                    best = v;
                    best_idx = idx;
                  }
                }
              }
            }
            if (kind_ == PoolKind::max) {
              y[o] = best;
              argmax_[o] = best_idx;
            } else {
              y[o] = sum / taps;
              tap_count_[o] = taps;
            }
          }
        }
      }
    }
  }
  return y;
}

Tensor Pool3d::backward(const Tensor& grad_out) {
  Tensor grad_in(input_shape_);
  if (grad_out.size() != argmax_.size()) throw ArgumentError("Pool3d::backward shape mismatch");
  if (kind_ == PoolKind::max) {
    for (std::size_t o = 0; o < grad_out.size(); ++o) grad_in[argmax_[o]] += grad_out[o];
    return grad_in;
  }
  const int n_batch = input_shape_[0], ch = input_shape_[1], din = input_shape_[2], hin = input_shape_[3],
            win = input_shape_[4];
  const auto [od, oh, ow] = output_extent({din, hin, win});
  std::size_t o = 0;
  for (int n = 0; n < n_batch; ++n) {
    for (int c = 0; c < ch; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * ch + c) * din * hin * win;
      for (int zd = 0; zd < od; ++zd) {
        for (int zh = 0; zh < oh; ++zh) {
          for (int zw = 0; zw < ow; ++zw, ++o) {
            const double g = grad_out[o] / tap_count_[o];
            for (int a = 0; a < kernel_[0]; ++a) {
              const int id = zd * stride_[0] - padding_[0] + a;
              if (id < 0 || id >= din) continue;
              for (int e = 0; e < kernel_[1]; ++e) {
                const int ih = zh * stride_[1] - padding_[1] + e;
                if (ih < 0 || ih >= hin) continue;
                for (int f = 0; f < kernel_[2]; ++f) {
                  const int iw = zw * stride_[2] - padding_[2] + f;
                  if (iw < 0 || iw >= win) continue;
                  grad_in[base + (static_cast<std::size_t>(id) * hin + ih) * win + iw] += g;
                }
              }
            }
          }
        }
      }
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// GlobalAvgPool
// ---------------------------------------------------------------------------

Tensor GlobalAvgPool::forward(const Tensor& x, Mode /*mode*/) {
  if (x.rank() < 2) throw ArgumentError("GlobalAvgPool expects [N, C, ...]");
  input_shape_ = x.shape();
  const int n_batch = x.dim(0), ch = x.dim(1);
  const std::size_t spatial = x.size() / (static_cast<std::size_t>(n_batch) * ch);
  Tensor y({n_batch, ch});
  for (std::size_t i = 0; i < y.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < spatial; ++j) s += x[i * spatial + j];
    y[i] = s / static_cast<double>(spatial);
  }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  Tensor grad_in(input_shape_);
  const std::size_t spatial = grad_in.size() / grad_out.size();
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    const double g = grad_out[i] / static_cast<double>(spatial);
    for (std::size_t j = 0; j < spatial; ++j) grad_in[i * spatial + j] = g;
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

Linear::Linear(int in_features, int out_features)
    : in_(in_features),
      out_(out_features),
      weight_(Tensor({out_features, in_features})),
      bias_(Tensor({out_features})) {
  if (in_features < 1 || out_features < 1) throw ArgumentError("Linear dimensions must be positive");
}

Tensor Linear::forward(const Tensor& x, Mode /*mode*/) {
  if (x.rank() != 2 || x.dim(1) != in_)
    throw ArgumentError("Linear expects [N, " + std::to_string(in_) + "], got " + x.shape_string());
  input_ = x;
  const int n_batch = x.dim(0);
  Tensor y({n_batch, out_});
  Eigen::Map<const RowMat> xm(x.data(), n_batch, in_);
  Eigen::Map<const RowMat> w(weight_.value.data(), out_, in_);
  Eigen::Map<const Eigen::RowVectorXd> b(bias_.value.data(), out_);
  Eigen::Map<RowMat> ym(y.data(), n_batch, out_);
  ym.noalias() = xm * w.transpose();
  ym.rowwise() += b;
  return y;
}

Tensor Linear::backward(const Tensor& grad_out) {
  const int n_batch = input_.dim(0);
  if (grad_out.shape() != Tensor::Shape{n_batch, out_}) throw ArgumentError("Linear::backward shape mismatch");
  Eigen::Map<const RowMat> dy(grad_out.data(), n_batch, out_);
  Eigen::Map<const RowMat> xm(input_.data(), n_batch, in_);
  Eigen::Map<const RowMat> w(weight_.value.data(), out_, in_);
  Eigen::Map<RowMat> dw(weight_.grad.data(), out_, in_);
  Eigen::Map<Eigen::RowVectorXd> db(bias_.grad.data(), out_);
  dw.noalias() += dy.transpose() * xm;
  db += dy.colwise().sum();
  Tensor grad_in({n_batch, in_});
  Eigen::Map<RowMat> dx(grad_in.data(), n_batch, in_);
  dx.noalias() = dy * w;
  return grad_in;
}

void Linear::collect(ParamSet& params, const std::string& prefix) {
  params.add(prefix + ".weight", weight_);
  params.add(prefix + ".bias", bias_);
}

void Linear::reset_parameters(std::mt19937_64& rng) { reset_uniform(rng, 1.0 / std::sqrt(static_cast<double>(in_))); }

void Linear::reset_uniform(std::mt19937_64& rng, double bound) {
  uniform_fill(weight_.value, rng, bound);
  uniform_fill(bias_.value, rng, bound);
}

// ---------------------------------------------------------------------------
// Sequential / ResidualBlock
// ---------------------------------------------------------------------------

Tensor Sequential::forward(const Tensor& x, Mode mode) {
  Tensor h = x;
  for (auto& layer : layers_) h = layer->forward(h, mode);
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

void Sequential::collect(ParamSet& params, const std::string& prefix) {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->collect(params, prefix + "." + std::to_string(i));
}

void Sequential::visit(const std::function<void(Layer&)>& fn) {
  fn(*this);
  for (auto& l : layers_) l->visit(fn);
}

void Sequential::reset_parameters(std::mt19937_64& rng) {
  for (auto& layer : layers_) layer->reset_parameters(rng);
}

ResidualBlock::ResidualBlock(int in_channels, int out_channels, Triple kernel, Triple stride)
    : conv1_({in_channels, out_channels, kernel, stride, same_padding(kernel), false}),
      bn1_(out_channels),
      conv2_({out_channels, out_channels, kernel, {1, 1, 1}, same_padding(kernel), false}),
      bn2_(out_channels) {
  if (in_channels != out_channels || stride != Triple{1, 1, 1}) {
    proj_ = std::make_unique<Conv3d>(ConvSpec{in_channels, out_channels, {1, 1, 1}, stride, {0, 0, 0}, false});
    proj_bn_ = std::make_unique<BatchNorm>(out_channels);
  }
}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode) {
  Tensor main = bn2_.forward(conv2_.forward(relu1_.forward(bn1_.forward(conv1_.forward(x, mode), mode), mode), mode),
                             mode);
  if (proj_) {
    main += proj_bn_->forward(proj_->forward(x, mode), mode);
  } else {
    main += x;
  }
  return relu_out_.forward(main, mode);
}

Tensor ResidualBlock::backward(const Tensor& grad_out) {
  Tensor g = relu_out_.backward(grad_out);
  Tensor g_main = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(g)))));
  if (proj_) {
    g_main += proj_->backward(proj_bn_->backward(g));
  } else {
    g_main += g;
  }
  return g_main;
}

void ResidualBlock::collect(ParamSet& params, const std::string& prefix) {
  conv1_.collect(params, prefix + ".conv1");
  bn1_.collect(params, prefix + ".bn1");
  conv2_.collect(params, prefix + ".conv2");
  bn2_.collect(params, prefix + ".bn2");
  if (proj_) {
    proj_->collect(params, prefix + ".proj");
    proj_bn_->collect(params, prefix + ".proj_bn");
  }
}

void ResidualBlock::visit(const std::function<void(Layer&)>& fn) {
  fn(*this);
  for (Layer* l : std::initializer_list<Layer*>{&conv1_, &bn1_, &relu1_, &conv2_, &bn2_, &relu_out_}) l->visit(fn);
  if (proj_) proj_->visit(fn);
  if (proj_bn_) proj_bn_->visit(fn);
}

void ResidualBlock::reset_parameters(std::mt19937_64& rng) {
  conv1_.reset_parameters(rng);
  bn1_.reset_parameters(rng);
  conv2_.reset_parameters(rng);
  bn2_.reset_parameters(rng);
  if (proj_) {
    proj_->reset_parameters(rng);
    proj_bn_->reset_parameters(rng);
  }
}

}  // namespace avcount::nn
