#pragma once

#include "gslosh/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

namespace gslosh::test {

inline Tensor2 random_tensor(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols,
                             double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor2 t(rows, cols);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = n(rng);
  return t;
}

inline Vector random_vector(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = d(rng);
  return v;
}

struct GradCheck {
  double worst = 0.0;
  std::size_t checked = 0;
};

/// Central differences of `loss` over every entry of `params` against
/// `analytic`. The error of each entry is relative to the larger of the two
/// values, floored at `floor` times the largest analytic magnitude and at 1e-6.
inline GradCheck check_gradient(std::span<double> params, std::span<const double> analytic,
                                const std::function<double()>& loss, double h = 1e-5,
                                double floor = 1e-3) {
  double gmax = 0.0;
  for (double g : analytic) gmax = std::max(gmax, std::abs(g));
  GradCheck out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double fp = loss();
    params[i] = keep - h;
    const double fm = loss();
    params[i] = keep;
    const double num = (fp - fm) / (2.0 * h);
    const double scale = std::max({std::abs(num), std::abs(analytic[i]), floor * gmax, 1e-6});
    out.worst = std::max(out.worst, std::abs(num - analytic[i]) / scale);
    ++out.checked;
  }
  return out;
}

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("gslosh-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace gslosh::test
