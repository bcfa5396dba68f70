#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "avcount/tensor.hpp"

namespace avtest {

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

/// Central difference of f with respect to x[i].
inline double central_difference(const std::function<double()>& f, double& x, double h = 1e-6) {
  const double keep = x;
  x = keep + h;
  const double up = f();
  x = keep - h;
  const double down = f();
  x = keep;
  return (up - down) / (2.0 * h);
}

/// Largest relative error between `analytic` and central differences of f
/// over every entry of `values`.
inline double max_gradient_error(const std::function<double()>& f, std::vector<double>& values,
                                 const std::vector<double>& analytic, double h = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i)
    worst = std::max(worst, relative_error(analytic[i], central_difference(f, values[i], h)));
  return worst;
}

inline avcount::Tensor random_tensor(avcount::Tensor::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                     double hi = 1.0) {
  avcount::Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("avcount_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace avtest
