#include "hsid/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace hsid {

Mat floor_covariance(const Mat& cov, double floor) {
  if (cov.rows() != cov.cols()) {
    throw std::invalid_argument("floor_covariance: matrix is not square");
  }
  if (cov.rows() == 0) return cov;
  const Mat sym = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> eig(sym);
  if (eig.info() != Eigen::Success) {
    throw std::runtime_error("floor_covariance: eigendecomposition failed");
  }
  const Vec clipped = eig.eigenvalues().cwiseMax(floor);
  if ((clipped.array() == eig.eigenvalues().array()).all()) return sym;
  Mat out = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

double min_eigenvalue(const Mat& m) {
  if (m.rows() == 0) return std::numeric_limits<double>::infinity();
  const Mat sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> eig(sym, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

bool identical(const Mat& a, const Mat& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
}

bool identical(const Vec& a, const Vec& b) {
  return a.size() == b.size() && (a.size() == 0 || a == b);
}

bool is_symmetric(const Mat& m, double tol) {
  if (m.rows() != m.cols()) return false;
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol || m.rows() == 0;
}

double log_sum_exp(std::span<const double> values) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : values) hi = std::max(hi, v);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - hi);
  return hi + std::log(acc);
}

double log_sum_exp(const Vec& values) {
  return log_sum_exp(std::span<const double>(values.data(), static_cast<std::size_t>(values.size())));
}

GaussianLogDensity::GaussianLogDensity(const Mat& cov) {
  const auto d = cov.rows();
  if (d == 0) return;
  Eigen::LLT<Mat> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("GaussianLogDensity: covariance is not positive definite");
  }
  lower_ = llt.matrixL();
  const double log_det = 2.0 * lower_.diagonal().array().log().sum();
  log_norm_ = -0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + log_det);
}

double GaussianLogDensity::operator()(const Vec& residual) const {
  if (lower_.rows() == 0) return 0.0;
  const Vec w = lower_.triangularView<Eigen::Lower>().solve(residual);
  return log_norm_ - 0.5 * w.squaredNorm();
}

double Rng::uniform(double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(engine_);
}

std::size_t Rng::uniform_index(std::size_t n) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(engine_);
}

int Rng::categorical(const Vec& p) {
  const double total = p.sum();
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw std::invalid_argument("Rng::categorical: weights must have positive finite mass");
  }
  const double r = uniform(0.0, total);
  double acc = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    acc += p[k];
    if (r < acc) return static_cast<int>(k);
  }
  // Rounding at the upper edge: return the last index with mass.
  for (Eigen::Index k = p.size() - 1; k >= 0; --k) {
    if (p[k] > 0.0) return static_cast<int>(k);
  }
  return static_cast<int>(p.size() - 1);
}

Vec Rng::gaussian(const Vec& mean, const Mat& lower) {
  Vec z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal();
  if (lower.rows() == 0) return mean;
  return mean + lower * z;
}

}  // namespace hsid
