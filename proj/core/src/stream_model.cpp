#include "avcount/stream_model.hpp"

#include "avcount/errors.hpp"

namespace avcount {

Backbone::Backbone(std::vector<std::unique_ptr<nn::Sequential>> stages, std::size_t tap_stage, int feature_dim)
    : stages_(std::move(stages)), tap_stage_(tap_stage), feature_dim_(feature_dim) {
  if (stages_.empty()) throw ArgumentError("backbone needs at least one stage");
  if (tap_stage_ >= stages_.size()) throw ArgumentError("tap stage out of range");
}

Backbone::Output Backbone::forward(const Tensor& x, nn::Mode mode) {
  Output out;
  Tensor h = x;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    h = stages_[i]->forward(h, mode);
    if (i == tap_stage_) out.mid = h;
  }
  out.feature = pool_->forward(h, mode);
  if (out.feature.dim(1) != feature_dim_) throw ArgumentError("backbone produced unexpected feature width");
  return out;
}

void Backbone::backward(const Tensor& d_feature) {
  Tensor g = pool_->backward(d_feature);
  for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) g = (*it)->backward(g);
}

void Backbone::collect(nn::ParamSet& params, const std::string& prefix) {
  for (std::size_t i = 0; i < stages_.size(); ++i) stages_[i]->collect(params, prefix + ".stage" + std::to_string(i));
}

void Backbone::reset_parameters(std::mt19937_64& rng) {
  for (auto& s : stages_) s->reset_parameters(rng);
}

StreamModel::StreamModel(Modality modality, Backbone backbone, HeadConfig head, std::mt19937_64& rng)
    : modality_(modality), backbone_(std::move(backbone)), head_(head, rng) {
  backbone_.reset_parameters(rng);
  if (head_.config().feature_dim != backbone_.feature_dim())
    throw ConfigError("head feature_dim " + std::to_string(head_.config().feature_dim) +
                      " does not match backbone output " + std::to_string(backbone_.feature_dim()));
}

StreamModel::Batch StreamModel::forward(const Tensor& input, nn::Mode mode) {
  auto out = backbone_.forward(input, mode);
  Batch b;
  b.heads = head_.forward(out.feature, mode);
  b.features = std::move(out.feature);
  b.mid = std::move(out.mid);
  return b;
}

void StreamModel::backward(const LossGrad& loss) {
  const Tensor d_feature = head_.backward(loss.d_count, loss.d_class_dist);
  backbone_.backward(d_feature);
}

nn::ParamSet StreamModel::params() {
  nn::ParamSet ps;
  backbone_.collect(ps, "backbone");
  head_.collect(ps, "head");
  return ps;
}

std::vector<nn::Layer*> Backbone::layers() {
  std::vector<nn::Layer*> out;
  for (auto& s : stages_) out.push_back(s.get());
  return out;
}

void StreamModel::zero_parameters() { nn::zero_trainable(params()); }

void StreamModel::save(const std::filesystem::path& path) { params().save(path); }

void StreamModel::load(const std::filesystem::path& path) { params().load(path); }

}  // namespace avcount
