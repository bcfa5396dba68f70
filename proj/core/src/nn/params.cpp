#include "avcount/nn/params.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

#include "avcount/errors.hpp"

namespace avcount::nn {

namespace {

constexpr char kMagic[8] = {'A', 'V', 'C', 'W', 'v', '0', '0', '1'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ParseError("truncated weights file");
  return v;
}

}  // namespace

void ParamSet::add(std::string name, Parameter& p) {
  if (find(name) != nullptr) throw ArgumentError("duplicate parameter name: " + name);
  entries_.emplace_back(std::move(name), &p);
}

void ParamSet::append(const ParamSet& other) {
  for (const auto& [name, p] : other.entries_) add(name, *p);
}

Parameter* ParamSet::find(const std::string& name) const {
  for (const auto& [n, p] : entries_)
    if (n == name) return p;
  return nullptr;
}

void ParamSet::zero_grad() {
  for (auto& [name, p] : entries_) p->grad.fill(0.0);
}

double ParamSet::grad_norm() const {
  double sq = 0.0;
  for (const auto& [name, p] : entries_) {
    if (!p->trainable) continue;
    for (double g : p->grad.values()) sq += g * g;
  }
  return std::sqrt(sq);
}

std::size_t ParamSet::trainable_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : entries_)
    if (p->trainable) n += p->value.size();
  return n;
}

void ParamSet::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MediaError("cannot write weights file " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint64_t>(out, entries_.size());
  for (const auto& [name, p] : entries_) {
    write_pod<std::uint64_t>(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const auto& shape = p->value.shape();
    write_pod<std::uint64_t>(out, shape.size());
    for (int d : shape) write_pod<std::int64_t>(out, d);
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!out) throw MediaError("failed writing weights file " + path.string());
}

void ParamSet::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DependencyError("missing weights file " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(std::begin(magic), std::end(magic), std::begin(kMagic)))
    throw ParseError("not an avcount weights file: " + path.string());
  const auto count = read_pod<std::uint64_t>(in);
  if (count != entries_.size())
    throw ParseError("weights file " + path.string() + " has " + std::to_string(count) + " tensors, model expects " +
                     std::to_string(entries_.size()));
  for (auto& [name, p] : entries_) {
    const auto len = read_pod<std::uint64_t>(in);
    std::string stored(len, '\0');
    in.read(stored.data(), static_cast<std::streamsize>(len));
    if (stored != name) throw ParseError("weights file tensor '" + stored + "' where '" + name + "' expected");
    const auto rank = read_pod<std::uint64_t>(in);
    Tensor::Shape shape;
    for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(read_pod<std::int64_t>(in)));
    if (shape != p->value.shape()) throw ParseError("shape mismatch for tensor '" + name + "'");
    in.read(reinterpret_cast<char*>(p->value.data()), static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    if (!in) throw ParseError("truncated weights file " + path.string());
  }
}

Sgd::Sgd(ParamSet params, SgdConfig config) : params_(std::move(params)), config_(config) {
  if (!(config_.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (config_.momentum < 0.0 || config_.momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  for (const auto& [name, p] : params_.entries()) velocity_.push_back(Tensor::zeros_like(p->value));
}

void Sgd::step() {
  double scale = 1.0;
  if (config_.clip_grad_norm > 0.0) {
    const double norm = params_.grad_norm();
    if (norm > config_.clip_grad_norm) scale = config_.clip_grad_norm / norm;
  }
  const auto& entries = params_.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Parameter& p = *entries[i].second;
    if (!p.trainable) continue;
    auto w = p.value.values();
    auto g = p.grad.values();
    auto v = velocity_[i].values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      double d = g[j] * scale + config_.weight_decay * w[j];
      if (config_.momentum > 0.0) {
        v[j] = config_.momentum * v[j] + d;
        d = v[j];
      }
      w[j] -= config_.learning_rate * d;
    }
  }
}

}  // namespace avcount::nn
