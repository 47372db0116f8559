#pragma once

#include <unistd.h>

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include <baryimp/gaussian.hpp>
#include <baryimp/posterior.hpp>

namespace testsupport {

/// Fresh directory under the system temp root, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    const auto base = std::filesystem::temp_directory_path();
    for (int i = 0;; ++i) {
      auto candidate = base / (tag + "_" + std::to_string(::getpid()) + "_" +
                               std::to_string(i));
      std::error_code ec;
      if (std::filesystem::create_directory(candidate, ec)) {
        path_ = candidate;
        return;
      }
    }
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  [[nodiscard]] std::string str() const { return path_.string(); }

private:
  std::filesystem::path path_;
};

/// Random SPD matrix A A^T + jitter I, entries of A standard normal.
inline Eigen::MatrixXd random_spd(std::mt19937_64& gen, Eigen::Index n,
                                  double jitter = 0.5) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = normal(gen);
  Eigen::MatrixXd s = a * a.transpose();
  s += jitter * Eigen::MatrixXd::Identity(n, n);
  return s;
}

inline Eigen::VectorXd random_vector(std::mt19937_64& gen, Eigen::Index n,
                                     double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(gen);
  return v;
}

/// Random orthogonal matrix via QR of a Gaussian matrix.
inline Eigen::MatrixXd random_orthogonal(std::mt19937_64& gen, Eigen::Index n) {
  Eigen::MatrixXd a(n, n);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = normal(gen);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  return qr.householderQ();
}

/// Random posterior set: K components with random means and covariances,
/// schedule starting at t_train with strictly increasing times.
inline baryimp::PosteriorSet random_posterior_set(std::mt19937_64& gen, int k,
                                                  Eigen::Index n,
                                                  double mean_scale = 1.0) {
  std::vector<baryimp::Gaussian> posts;
  std::vector<Eigen::Index> times;
  for (int i = 0; i < k; ++i) {
    posts.emplace_back(random_vector(gen, n, mean_scale), random_spd(gen, n));
    times.push_back(100 + 10 * i);
  }
  return baryimp::PosteriorSet(std::move(posts),
                               baryimp::TruncationSchedule{std::move(times)});
}

/// All simplex points with coordinates on a uniform grid of the given
/// step (inclusive of the vertices). Exact for steps of the form 1/m.
inline void for_each_simplex_point(
    int k, int divisions, const std::function<void(const Eigen::VectorXd&)>& fn) {
  std::vector<int> counts(static_cast<std::size_t>(k), 0);
  std::function<void(int, int)> rec = [&](int idx, int remaining) {
    if (idx == k - 1) {
      counts[static_cast<std::size_t>(idx)] = remaining;
      Eigen::VectorXd lambda(k);
      for (int i = 0; i < k; ++i)
        lambda(i) = static_cast<double>(counts[static_cast<std::size_t>(i)]) /
                    static_cast<double>(divisions);
      fn(lambda);
      return;
    }
    for (int c = 0; c <= remaining; ++c) {
      counts[static_cast<std::size_t>(idx)] = c;
      rec(idx + 1, remaining - c);
    }
  };
  rec(0, divisions);
}

}  // namespace testsupport
