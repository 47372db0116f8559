#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace baryimp {

/// SplitMix64 output function. Bijective mixer with good avalanche
/// behaviour, used to derive independent child seeds from a master seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Derives a child seed from a master seed and a coordinate path, e.g.
/// (stream id, simulation index, imputation index). Each coordinate is
/// folded through splitmix64 so that distinct paths give unrelated
/// streams. The same derivation is used by the staged CLI commands and
/// the monolithic sweep so that both produce identical draws.
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = splitmix64(master);
  for (std::uint64_t c : path) {
    s = splitmix64(s ^ splitmix64(c + 0x632BE59BD9B4E019ull));
  }
  return s;
}

/// Named stream ids separating the RNG consumers of an experiment.
/// Keeping them disjoint means e.g. re-running the imputation stage never
/// perturbs the mask draws.
namespace stream {
constexpr std::uint64_t panel = 1;
constexpr std::uint64_t mask = 2;
constexpr std::uint64_t impute = 3;
constexpr std::uint64_t bootstrap = 4;
}  // namespace stream

/// Deterministic random source. Wraps std::mt19937_64 (whose sequence is
/// fixed by the standard) and implements the floating-point distributions
/// by hand so that every platform reproduces the same stream bit for bit;
/// the std:: distribution objects are not portable across libraries.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform integer in [0, n). Rejection sampling keeps the draw unbiased.
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) { return uniform01() < p; }

  /// Standard normal via Box-Muller; the second variate of each pair is
  /// cached so consecutive calls consume a deterministic number of
  /// engine outputs.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  /// Vector of independent standard normals.
  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z(i) = normal();
    return z;
  }

  /// Draws a component index from a categorical distribution. Weights must
  /// be nonnegative with positive sum; they are not required to be
  /// normalized.
  int categorical(const Eigen::VectorXd& weights) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
      if (weights(i) < 0.0)
        throw std::invalid_argument("categorical: negative weight");
      total += weights(i);
    }
    if (total <= 0.0)
      throw std::invalid_argument("categorical: weights sum to zero");
    const double u = uniform01() * total;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
      acc += weights(i);
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size() - 1);
  }

  std::mt19937_64& engine() { return engine_; }

private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Sample from N(mean, L L^T) given the lower Cholesky factor L.
inline Eigen::VectorXd sample_mvn(Rng& rng, const Eigen::VectorXd& mean,
                                  const Eigen::MatrixXd& chol_lower) {
  return mean + chol_lower * rng.normal_vector(mean.size());
}

}  // namespace baryimp
