#include "support.hpp"

#include "hsid/features.hpp"
#include "hsid/model.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace hsid;
using namespace hsid::testing;

TEST_CASE("covariance floor clips eigenvalues from below") {
  Mat c(2, 2);
  c << 1.0, 0.0, 0.0, 1e-9;
  const Mat f = floor_covariance(c, 1e-6);
  CHECK(min_eigenvalue(f) >= 1e-6 - 1e-15);
  CHECK(f(0, 0) == doctest::Approx(1.0));
  Mat asym(2, 2);
  asym << 2.0, 1.0, 0.0, 2.0;
  CHECK(is_symmetric(floor_covariance(asym, 1e-6), 0.0));
}

TEST_CASE("log_sum_exp is stable for large magnitudes") {
  Vec v(3);
  v << -1000.0, -1000.0, -2000.0;
  CHECK(log_sum_exp(v) == doctest::Approx(-1000.0 + std::log(2.0)));
  Vec w = Vec::Constant(2, -INFINITY);
  CHECK(std::isinf(log_sum_exp(w)));
}

TEST_CASE("gaussian log density matches the scalar formula") {
  Mat cov(1, 1);
  cov << 4.0;
  GaussianLogDensity g(cov);
  Vec r(1);
  r << 1.0;
  CHECK(g(r) == doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi * 4.0) - 0.125).epsilon(1e-14));
}

TEST_CASE("controller features") {
  Vec x(2);
  x << 2.0, 3.0;
  CHECK(identical(controller_features(x, {}, 0, 1), Vec(x)));

  Vec x1(1);
  x1 << 2.0;
  std::vector<Vec> past{Vec::Constant(1, 5.0)};
  Vec want(2);
  want << 2.0, 5.0;
  CHECK(identical(controller_features(x1, past, 1, 1), want));

  Vec quad(5);
  quad << 2.0, 3.0, 4.0, 6.0, 9.0;
  CHECK(identical(controller_features(x, {}, 0, 2), quad));
  CHECK(controller_feature_dim(2, 1, 1, 2) == 6);
  CHECK(monomial_count(3, 3) == 19);

  CHECK_THROWS_AS(controller_features(x, past, 0, 1), std::invalid_argument);
}

TEST_CASE("recorded controller features zero-pad the warm-up") {
  Mat us(1, 3);
  us << 1.0, 2.0, 3.0;
  Vec x = Vec::Constant(1, 7.0);
  Vec f0 = controller_features_at(x, us, 0, 2, 1);
  Vec want0(3);
  want0 << 7.0, 0.0, 0.0;
  CHECK(identical(f0, want0));
  Vec f2 = controller_features_at(x, us, 2, 2, 1);
  Vec want2(3);
  want2 << 7.0, 1.0, 2.0;
  CHECK(identical(f2, want2));
}

TEST_CASE("step dynamics examples") {
  HybridModel m = make_model(1, 2, 1, LoopMode::OpenLoop, TransitionModel::stationary(1, 2, 1));
  Vec x(2);
  x << 0.0, 1.0;
  Vec u = Vec::Constant(1, 2.0);
  CHECK(identical(step_dynamics_mean(m, 0, x, u), Vec(x)));

  const double dt = 0.1;
  m.dynamics[0].A << 1.0, dt, 0.0, 1.0;
  m.dynamics[0].B << 0.0, dt;
  const Vec y = step_dynamics_mean(m, 0, x, u);
  CHECK(y[0] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(y[1] == doctest::Approx(1.2).epsilon(1e-15));

  m.dynamics[0].A.setZero();
  m.dynamics[0].B.setZero();
  m.dynamics[0].c << 3.0, -1.0;
  Vec off(2);
  off << 3.0, -1.0;
  CHECK(identical(step_dynamics_mean(m, 0, x, u), off));
}

TEST_CASE("initial draw") {
  Rng rng(4);
  HybridModel m = make_model(1, 2, 0, LoopMode::OpenLoop, TransitionModel::stationary(1, 2, 0));
  for (int i = 0; i < 20; ++i) CHECK(sample_initial(m, rng).z == 0);

  HybridModel c = make_model(1, 2, 1, LoopMode::ClosedLoop, TransitionModel::stationary(1, 2, 1));
  c.controllers[0].gain << 1.0, 0.0;
  c.controllers[0].sigma_cov << 1e-12;
  const InitialDraw d = sample_initial(c, rng);
  CHECK(d.u[0] == doctest::Approx(d.x[0]).epsilon(1e-5));

  HybridModel o = make_model(1, 2, 1, LoopMode::OpenLoop, TransitionModel::stationary(1, 2, 1));
  CHECK_THROWS_AS(sample_initial(o, rng), std::invalid_argument);
}

TEST_CASE("noiseless sampling follows the deterministic recursion") {
  Rng rng(11);
  HybridModel m = random_model(rng, 2, 2, 1, LoopMode::ClosedLoop, LinkKind::Linear, 1, 2);
  SampleOptions o;
  o.noiseless = true;
  const SampledPath p = sample_trajectory(m, 30, rng, o);
  for (Eigen::Index t = 0; t + 1 < p.traj.length(); ++t) {
    const Vec pred = step_dynamics_mean(m, p.regimes[t + 1], p.traj.xs.col(t), p.traj.us.col(t));
    CHECK(max_abs_diff(pred, p.traj.xs.col(t + 1)) <= 1e-12 * (1.0 + pred.norm()));
    const Vec phi = controller_features_at(p.traj.xs.col(t), p.traj.us, t, m.lag, m.poly_degree);
    CHECK(max_abs_diff(controller_mean(m, p.regimes[t], phi), p.traj.us.col(t)) <= 1e-12);
  }
}

TEST_CASE("sign-threshold link flips regime exactly at the crossing") {
  // Regime 0 drifts x1 upward, regime 1 downward; the link saturates on sign(x1).
  TransitionModel tm = TransitionModel::linear(2, 1, 0);
  tm.params << -200.0, 200.0;  // g_0 = -200 s, g_1 = +200 s
  HybridModel m = make_model(2, 1, 0, LoopMode::OpenLoop, tm);
  m.dynamics[0].c << 0.3;
  m.dynamics[1].c << -0.3;
  m.dynamics[0].lam_cov << 0.01;
  m.dynamics[1].lam_cov << 0.01;
  Rng rng(2);
  const SampledPath p = sample_trajectory(m, 200, rng);
  int checked = 0;
  for (Eigen::Index t = 0; t + 1 < p.traj.length(); ++t) {
    const double x = p.traj.xs(0, t);
    if (std::abs(x) < 0.05) continue;  // logits below saturation
    CHECK(p.regimes[t + 1] == (x > 0.0 ? 1 : 0));
    ++checked;
  }
  CHECK(checked > 100);
}

TEST_CASE("local evidence") {
  SUBCASE("zero residual unit Gaussians") {
    HybridModel m = make_model(1, 2, 1, LoopMode::ClosedLoop, TransitionModel::stationary(1, 2, 1));
    Trajectory tr;
    tr.xs = Mat::Zero(2, 4);
    tr.us = Mat::Zero(1, 4);
    const Mat e = log_local_evidence(m, tr);
    const double want = -1.5 * std::log(2.0 * std::numbers::pi);
    for (Eigen::Index t = 0; t < 4; ++t) CHECK(e(t, 0) == doctest::Approx(want).epsilon(1e-14));
    const Mat d = log_dynamics_evidence(m, tr);
    CHECK(d(2, 0) == doctest::Approx(-std::log(2.0 * std::numbers::pi)).epsilon(1e-14));
  }
  SUBCASE("invariant under id, equivariant under permutation") {
    Rng rng(8);
    HybridModel m = random_model(rng, 3, 2, 1, LoopMode::ClosedLoop);
    Trajectory tr = random_trajectory(m, 12, rng);
    const Mat e = log_local_evidence(m, tr);
    tr.id = "renamed";
    CHECK(identical(log_local_evidence(m, tr), e));
    const std::vector<int> perm{2, 0, 1};
    const Mat ep = log_local_evidence(permute_regimes(m, perm), tr);
    for (int r = 0; r < 3; ++r) CHECK(identical(Mat(ep.col(r)), Mat(e.col(perm[r]))));
  }
}

TEST_CASE("model validation rejects broken parameters") {
  HybridModel m = make_model(2, 1, 0, LoopMode::OpenLoop, TransitionModel::stationary(2, 1, 0));
  m.init.pi << 0.7, 0.7;
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);
  m.init.pi << 0.5, 0.5;
  m.dynamics[1].lam_cov << -1.0;
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);
  Trajectory tr;
  tr.xs = Mat::Zero(1, 1);
  tr.us = Mat::Zero(0, 1);
  CHECK_THROWS_AS(tr.validate(), std::invalid_argument);
}
