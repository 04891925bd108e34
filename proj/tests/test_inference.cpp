#include "support.hpp"

#include "hsid/inference.hpp"

#include <doctest.h>

#include <cmath>

using namespace hsid;
using namespace hsid::testing;

namespace {

struct Instance {
  HybridModel model;
  Trajectory traj;
};

Instance random_instance(std::uint64_t seed, int K, Eigen::Index T) {
  Rng rng(seed);
  const LinkKind kinds[] = {LinkKind::Stationary, LinkKind::Linear, LinkKind::Polynomial, LinkKind::Perceptron};
  const LoopMode mode = seed % 2 ? LoopMode::ClosedLoop : LoopMode::OpenLoop;
  HybridModel m = random_model(rng, K, 2, 1, mode, kinds[seed % 4]);
  return {m, random_trajectory(m, T, rng)};
}

void check_against_brute_force(const HybridModel& m, const Trajectory& tr) {
  const Posterior fb = smooth(m, tr);
  const Posterior bf = brute_force_posterior(m, tr);
  CHECK(std::abs(fb.loglik - bf.loglik) <= 1e-10 * std::abs(bf.loglik));
  CHECK(max_abs_diff(fb.gamma, bf.gamma) <= 1e-10);
  for (std::size_t t = 0; t < fb.xi.size(); ++t) CHECK(max_abs_diff(fb.xi[t], bf.xi[t]) <= 1e-10);
}

}  // namespace

TEST_CASE("forward-backward matches path enumeration") {
  SUBCASE("K=2, T=3, seed 0") {
    Instance in = random_instance(0, 2, 3);
    check_against_brute_force(in.model, in.traj);
  }
  SUBCASE("K=3, T=6, seed 1") {
    Instance in = random_instance(1, 3, 6);
    check_against_brute_force(in.model, in.traj);
  }
  SUBCASE("50 random instances") {
    for (std::uint64_t s = 0; s < 50; ++s) {
      CAPTURE(s);
      Instance in = random_instance(1000 + s, 1 + static_cast<int>(s % 3), 2 + static_cast<Eigen::Index>(s % 7));
      check_against_brute_force(in.model, in.traj);
    }
  }
}

TEST_CASE("single regime") {
  Rng rng(3);
  HybridModel m = random_model(rng, 1, 2, 1);
  Trajectory tr = random_trajectory(m, 9, rng);
  const Mat e = log_local_evidence(m, tr);
  const auto trans = transition_matrices(m, tr);
  const ForwardResult f = forward_pass(e, trans, m.init.pi);
  CHECK((f.alpha.array() == 1.0).all());
  CHECK(f.loglik == doctest::Approx(e.sum()).epsilon(1e-13));
  const Mat beta = backward_pass(e, trans, f.log_norms);
  CHECK((beta.array() == 1.0).all());
  const Posterior p = smooth(m, tr);
  CHECK((p.gamma.array() == 1.0).all());
  for (const auto& x : p.xi) CHECK(x(0, 0) == 1.0);
  CHECK(p.loglik == f.loglik);
}

TEST_CASE("indistinguishable regimes keep a flat belief") {
  Mat e = Mat::Zero(5, 2);
  e.col(0) = Vec::LinSpaced(5, -3.0, 1.0);
  e.col(1) = e.col(0);
  std::vector<Mat> trans(4, Mat::Constant(2, 2, 0.5));
  const ForwardResult f = forward_pass(e, trans, Vec::Constant(2, 0.5));
  CHECK(max_abs_diff(f.alpha, Mat::Constant(5, 2, 0.5)) < 1e-15);
  CHECK(f.loglik == doctest::Approx(e.col(0).sum()).epsilon(1e-13));
}

TEST_CASE("saturated evidence gives one-hot marginals") {
  Rng rng(9);
  const int K = 3;
  const Eigen::Index T = 10;
  Mat e = Mat::Constant(T, K, -60.0);
  std::vector<int> truth;
  for (Eigen::Index t = 0; t < T; ++t) {
    truth.push_back(static_cast<int>(rng.uniform_index(K)));
    e(t, truth.back()) = 0.0;
  }
  std::vector<Mat> trans(T - 1, Mat::Constant(K, K, 1.0 / K));
  const Posterior p = smooth(e, trans, Vec::Constant(K, 1.0 / K));
  double worst = 0.0;
  for (Eigen::Index t = 0; t < T; ++t) {
    for (int k = 0; k < K; ++k) worst = std::max(worst, std::abs(p.gamma(t, k) - (k == truth[t] ? 1.0 : 0.0)));
  }
  CHECK(worst < 1e-9);
  CHECK(viterbi(e, trans, Vec::Constant(K, 1.0 / K)) == truth);
}

TEST_CASE("one step posterior is Bayes rule") {
  Mat e(1, 3);
  e << -1.0, -2.0, -0.5;
  Vec pi(3);
  pi << 0.2, 0.3, 0.5;
  const Posterior p = smooth(e, {}, pi);
  Vec w = pi.array() * e.row(0).transpose().array().exp();
  w /= w.sum();
  CHECK(max_abs_diff(p.gamma.row(0).transpose(), w) < 1e-15);
  CHECK(p.xi.empty());
}

TEST_CASE("marginalization consistency") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    Instance in = random_instance(200 + s, 3, 40);
    const Posterior p = smooth(in.model, in.traj);
    for (std::size_t t = 0; t < p.xi.size(); ++t) {
      const Eigen::Index ti = static_cast<Eigen::Index>(t);
      CHECK(max_abs_diff(p.xi[t].rowwise().sum(), p.gamma.row(ti).transpose()) < 1e-8);
      CHECK(max_abs_diff(p.xi[t].colwise().sum().transpose(), p.gamma.row(ti + 1).transpose()) < 1e-8);
    }
  }
}

TEST_CASE("permutation equivariance") {
  Instance in = random_instance(31, 3, 25);
  const std::vector<int> perm{2, 0, 1};
  const Posterior a = smooth(in.model, in.traj);
  const Posterior b = smooth(permute_regimes(in.model, perm), in.traj);
  CHECK(std::abs(a.loglik - b.loglik) <= 1e-12 * std::abs(a.loglik));
  for (int r = 0; r < 3; ++r) CHECK(max_abs_diff(b.gamma.col(r), a.gamma.col(perm[r])) < 1e-12);
  for (std::size_t t = 0; t < a.xi.size(); ++t) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) CHECK(std::abs(b.xi[t](j, i) - a.xi[t](perm[j], perm[i])) < 1e-12);
    }
  }
}

TEST_CASE("scaled messages agree with a log-domain recursion") {
  Instance in = random_instance(41, 3, 200);
  const Mat e = log_local_evidence(in.model, in.traj);
  const auto trans = transition_matrices(in.model, in.traj);
  // Unscaled log-domain forward, summed in a different order.
  const int K = in.model.K;
  Vec la = in.model.init.pi.array().log().matrix() + e.row(0).transpose();
  for (Eigen::Index t = 1; t < e.rows(); ++t) {
    Vec next(K);
    for (int i = 0; i < K; ++i) {
      Vec terms(K);
      for (int j = 0; j < K; ++j) terms[j] = la[j] + std::log(trans[static_cast<std::size_t>(t - 1)](i, j));
      next[i] = log_sum_exp(terms) + e(t, i);
    }
    la = next;
  }
  const double want = log_sum_exp(la);
  CHECK(std::abs(smooth(e, trans, in.model.init.pi).loglik - want) <= 1e-9 * std::abs(want));
}

TEST_CASE("dataset E-step totals") {
  Instance in = random_instance(51, 2, 5);
  const Dataset one = Dataset::from({in.traj});
  const EStepResult r1 = estep(in.model, one);
  CHECK(r1.total_loglik == r1.posteriors[0].loglik);
  const Dataset two = Dataset::from({in.traj, in.traj});
  CHECK(estep(in.model, two).total_loglik == 2.0 * r1.total_loglik);

  Rng rng(3);
  std::vector<Trajectory> trs;
  for (int n = 0; n < 3; ++n) trs.push_back(random_trajectory(in.model, 6, rng));
  double bf = 0.0;
  for (const auto& tr : trs) bf += brute_force_posterior(in.model, tr).loglik;
  const double fb = estep(in.model, Dataset::from(trs)).total_loglik;
  CHECK(std::abs(fb - bf) <= 1e-10 * std::abs(bf));
}

TEST_CASE("zero evidence mass is an error") {
  Mat e = Mat::Zero(3, 2);
  e.row(1).setConstant(-INFINITY);
  std::vector<Mat> trans(2, Mat::Constant(2, 2, 0.5));
  CHECK_THROWS_AS(forward_pass(e, trans, Vec::Constant(2, 0.5)), std::runtime_error);
}

TEST_CASE("far-below evidence rows are rescaled before exponentiation") {
  Mat e = Mat::Constant(4, 2, -900.0);
  e(2, 1) = -905.0;
  std::vector<Mat> trans(3, Mat::Constant(2, 2, 0.5));
  const Posterior p = smooth(e, trans, Vec::Constant(2, 0.5));
  CHECK(std::isfinite(p.loglik));
  CHECK(p.gamma(2, 0) > 0.99);
}
