#include "hsid/inference.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace hsid {
namespace {

void check_shapes(const Mat& evidence, std::span<const Mat> trans, const Vec& pi) {
  const Eigen::Index T = evidence.rows();
  const Eigen::Index K = evidence.cols();
  if (T < 1 || K < 1) throw std::invalid_argument("inference: empty evidence matrix");
  if (pi.size() != K) throw std::invalid_argument("inference: pi has the wrong length");
  if (static_cast<Eigen::Index>(trans.size()) != T - 1) {
    throw std::invalid_argument("inference: need T-1 transition matrices");
  }
  for (const auto& m : trans) {
    if (m.rows() != K || m.cols() != K) {
      throw std::invalid_argument("inference: transition matrix must be K x K");
    }
  }
}

[[noreturn]] void zero_mass(Eigen::Index t) {
  throw std::runtime_error("forward_pass: zero total evidence mass at step " + std::to_string(t));
}

}  // namespace

ForwardResult forward_pass(const Mat& evidence, std::span<const Mat> trans, const Vec& pi) {
  check_shapes(evidence, trans, pi);
  const Eigen::Index T = evidence.rows();
  const Eigen::Index K = evidence.cols();
  ForwardResult out;
  out.alpha.resize(T, K);
  out.log_norms.resize(T);

  Vec prior = pi;
  Vec a(K);
  for (Eigen::Index t = 0; t < T; ++t) {
    if (t > 0) prior.noalias() = trans[static_cast<std::size_t>(t - 1)] * out.alpha.row(t - 1).transpose();
    // Shift by the largest prior-weighted log evidence so that a regime with
    // no prior mass cannot dominate the shift and underflow the rest.
    double hi = -INFINITY;
    for (Eigen::Index k = 0; k < K; ++k) {
      if (prior[k] > 0.0) hi = std::max(hi, evidence(t, k) + std::log(prior[k]));
    }
    if (!std::isfinite(hi)) zero_mass(t);
    for (Eigen::Index k = 0; k < K; ++k) {
      a[k] = prior[k] > 0.0 ? std::exp(evidence(t, k) + std::log(prior[k]) - hi) : 0.0;
    }
    const double s = a.sum();
    if (!(s > 0.0) || !std::isfinite(s)) zero_mass(t);
    out.alpha.row(t) = (a / s).transpose();
    out.log_norms[t] = hi + std::log(s);
  }
  out.loglik = out.log_norms.sum();
  return out;
}

Mat backward_pass(const Mat& evidence, std::span<const Mat> trans, const Vec& log_norms) {
  const Eigen::Index T = evidence.rows();
  const Eigen::Index K = evidence.cols();
  if (log_norms.size() != T) throw std::invalid_argument("backward_pass: log_norms length");
  if (static_cast<Eigen::Index>(trans.size()) != T - 1) {
    throw std::invalid_argument("backward_pass: need T-1 transition matrices");
  }
  Mat beta(T, K);
  beta.row(T - 1).setOnes();
  Vec w(K);
  for (Eigen::Index t = T - 2; t >= 0; --t) {
    for (Eigen::Index i = 0; i < K; ++i) {
      w[i] = std::exp(evidence(t + 1, i) - log_norms[t + 1]) * beta(t + 1, i);
    }
    beta.row(t) = (trans[static_cast<std::size_t>(t)].transpose() * w).transpose();
    if (!beta.row(t).allFinite()) {
      throw std::runtime_error("backward_pass: message overflow at step " + std::to_string(t));
    }
  }
  return beta;
}

Posterior smooth(const Mat& evidence, std::span<const Mat> trans, const Vec& pi) {
  const ForwardResult fwd = forward_pass(evidence, trans, pi);
  const Mat beta = backward_pass(evidence, trans, fwd.log_norms);
  const Eigen::Index T = evidence.rows();
  const Eigen::Index K = evidence.cols();

  Posterior post;
  post.loglik = fwd.loglik;
  post.gamma = fwd.alpha.cwiseProduct(beta);
  for (Eigen::Index t = 0; t < T; ++t) post.gamma.row(t) /= post.gamma.row(t).sum();

  post.xi.resize(static_cast<std::size_t>(T - 1));
  Vec w(K);
  for (Eigen::Index t = 0; t + 1 < T; ++t) {
    for (Eigen::Index i = 0; i < K; ++i) {
      w[i] = std::exp(evidence(t + 1, i) - fwd.log_norms[t + 1]) * beta(t + 1, i);
    }
    // xi(j, i) = alpha_t(j) psi_t(i, j) w(i)
    Mat xi = fwd.alpha.row(t).transpose().asDiagonal() * trans[static_cast<std::size_t>(t)].transpose();
    xi *= w.asDiagonal();
    xi /= xi.sum();
    post.xi[static_cast<std::size_t>(t)] = std::move(xi);
  }
  return post;
}

Posterior smooth(const HybridModel& model, const Trajectory& traj) {
  const Mat ev = log_local_evidence(model, traj);
  const auto trans = transition_matrices(model, traj);
  return smooth(ev, trans, model.init.pi);
}

Posterior brute_force_posterior(const Mat& evidence, std::span<const Mat> trans, const Vec& pi) {
  check_shapes(evidence, trans, pi);
  const Eigen::Index T = evidence.rows();
  const int K = static_cast<int>(evidence.cols());
  const double paths_d = std::pow(static_cast<double>(K), static_cast<double>(T));
  if (paths_d > 1e6) {
    throw std::invalid_argument("brute_force_posterior: K^T = " + std::to_string(paths_d) +
                                " exceeds the enumeration limit of 1e6");
  }
  const auto n_paths = static_cast<std::size_t>(std::llround(paths_d));

  std::vector<Mat> log_trans;
  log_trans.reserve(trans.size());
  for (const auto& m : trans) log_trans.push_back(m.array().log().matrix());
  const Vec log_pi = pi.array().log().matrix();

  std::vector<int> path(static_cast<std::size_t>(T), 0);
  std::vector<double> log_w(n_paths);
  for (std::size_t p = 0; p < n_paths; ++p) {
    std::size_t code = p;
    for (Eigen::Index t = 0; t < T; ++t) {
      path[static_cast<std::size_t>(t)] = static_cast<int>(code % static_cast<std::size_t>(K));
      code /= static_cast<std::size_t>(K);
    }
    double lw = log_pi[path[0]] + evidence(0, path[0]);
    for (Eigen::Index t = 1; t < T; ++t) {
      const int prev = path[static_cast<std::size_t>(t - 1)];
      const int cur = path[static_cast<std::size_t>(t)];
      lw += log_trans[static_cast<std::size_t>(t - 1)](cur, prev) + evidence(t, cur);
    }
    log_w[p] = lw;
  }

  Posterior post;
  post.loglik = log_sum_exp(log_w);
  if (!std::isfinite(post.loglik)) {
    throw std::runtime_error("brute_force_posterior: zero total probability");
  }
  post.gamma = Mat::Zero(T, K);
  post.xi.assign(static_cast<std::size_t>(T - 1), Mat::Zero(K, K));
  for (std::size_t p = 0; p < n_paths; ++p) {
    const double w = std::exp(log_w[p] - post.loglik);
    std::size_t code = p;
    for (Eigen::Index t = 0; t < T; ++t) {
      path[static_cast<std::size_t>(t)] = static_cast<int>(code % static_cast<std::size_t>(K));
      code /= static_cast<std::size_t>(K);
    }
    for (Eigen::Index t = 0; t < T; ++t) {
      post.gamma(t, path[static_cast<std::size_t>(t)]) += w;
      if (t + 1 < T) {
        post.xi[static_cast<std::size_t>(t)](path[static_cast<std::size_t>(t)],
                                             path[static_cast<std::size_t>(t + 1)]) += w;
      }
    }
  }
  return post;
}

Posterior brute_force_posterior(const HybridModel& model, const Trajectory& traj) {
  const Mat ev = log_local_evidence(model, traj);
  const auto trans = transition_matrices(model, traj);
  return brute_force_posterior(ev, trans, model.init.pi);
}

EStepResult estep(const HybridModel& model, const Dataset& data) {
  EStepResult out;
  out.posteriors.reserve(data.trajectories.size());
  for (const auto& tr : data.trajectories) {
    out.posteriors.push_back(smooth(model, tr));
    out.total_loglik += out.posteriors.back().loglik;
  }
  return out;
}

std::vector<int> viterbi(const Mat& evidence, std::span<const Mat> trans, const Vec& pi) {
  check_shapes(evidence, trans, pi);
  const Eigen::Index T = evidence.rows();
  const Eigen::Index K = evidence.cols();
  Mat score(T, K);
  Eigen::MatrixXi back(T, K);
  score.row(0) = (pi.array().log() + evidence.row(0).transpose().array()).transpose();
  for (Eigen::Index t = 1; t < T; ++t) {
    const Mat lt = trans[static_cast<std::size_t>(t - 1)].array().log().matrix();
    for (Eigen::Index i = 0; i < K; ++i) {
      double best = -std::numeric_limits<double>::infinity();
      Eigen::Index arg = 0;
      for (Eigen::Index j = 0; j < K; ++j) {
        const double s = score(t - 1, j) + lt(i, j);
        if (s > best) {
          best = s;
          arg = j;
        }
      }
      score(t, i) = best + evidence(t, i);
      back(t, i) = static_cast<int>(arg);
    }
  }
  std::vector<int> path(static_cast<std::size_t>(T));
  Eigen::Index arg = 0;
  score.row(T - 1).maxCoeff(&arg);
  path.back() = static_cast<int>(arg);
  for (Eigen::Index t = T - 1; t > 0; --t) {
    path[static_cast<std::size_t>(t - 1)] = back(t, path[static_cast<std::size_t>(t)]);
  }
  return path;
}

}  // namespace hsid
