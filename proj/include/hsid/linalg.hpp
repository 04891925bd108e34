#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>

namespace hsid {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kDefaultCovarianceFloor = 1e-6;

/// Symmetrizes `cov` and clips its eigenvalues from below at `floor`.
///
/// Clipping (rather than adding floor*I) is the maximizer of a Gaussian
/// likelihood over {S : S >= floor*I}, so EM stays monotone when it is
/// applied inside an M-step.
Mat floor_covariance(const Mat& cov, double floor);

/// Smallest eigenvalue of the symmetric part of `m`.
double min_eigenvalue(const Mat& m);

/// Same shape and exactly equal entries.
bool identical(const Mat& a, const Mat& b);
bool identical(const Vec& a, const Vec& b);

bool is_symmetric(const Mat& m, double tol);

double log_sum_exp(std::span<const double> values);
double log_sum_exp(const Vec& values);

/// Cached Cholesky factor of a covariance matrix for repeated log-density
/// evaluation. A zero-dimensional covariance evaluates to log-density 0.
class GaussianLogDensity {
 public:
  GaussianLogDensity() = default;
  explicit GaussianLogDensity(const Mat& cov);

  double operator()(const Vec& residual) const;
  const Mat& lower() const { return lower_; }

 private:
  Mat lower_;
  double log_norm_ = 0.0;
};

/// Seeded pseudo-random stream. There is no default constructor: every
/// stochastic operation takes an explicitly seeded generator.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  double normal() { return normal_(engine_); }
  double uniform(double lo, double hi);
  std::size_t uniform_index(std::size_t n);
  /// Draws an index from the (unnormalized, nonnegative) weights `p`.
  int categorical(const Vec& p);
  /// mean + L * standard-normal vector, with L a lower Cholesky factor.
  Vec gaussian(const Vec& mean, const Mat& lower);
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uint64_t seed_;
};

}  // namespace hsid
