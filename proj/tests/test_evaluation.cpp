#include "support.hpp"

#include "hsid/evaluation.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace hsid;
using namespace hsid::testing;

namespace {

// Two-regime ball-like model: free flight above 0, reflection below, with a
// saturated link on the sign of the height.
HybridModel saturated_ball_model() {
  const double dt = 0.05, g = 9.81, e = 0.8;
  TransitionModel tm = TransitionModel::linear(2, 2, 0);
  tm.params << 1e6, 0.0, -1e6, 0.0;  // regime 0 when h > 0, regime 1 when h < 0
  HybridModel m = make_model(2, 2, 0, LoopMode::OpenLoop, tm);
  m.dynamics[0].A << 1.0, dt, 0.0, 1.0;
  m.dynamics[0].c << -0.5 * g * dt * dt, -g * dt;
  m.dynamics[1].A << -e, -e * dt, 0.0, -e;
  m.dynamics[1].c << e * 0.5 * g * dt * dt, e * g * dt;
  return m;
}

HybridModel noiseless_linear_model() {
  HybridModel m = make_model(1, 2, 1, LoopMode::OpenLoop, TransitionModel::stationary(1, 2, 1));
  m.dynamics[0].A << 0.9, 0.1, -0.1, 0.9;
  m.dynamics[0].B << 0.0, 0.2;
  m.dynamics[0].c << 0.05, 0.0;
  m.dynamics[0].lam_cov = 1e-6 * Mat::Identity(2, 2);
  return m;
}

Dataset noiseless_dataset(const HybridModel& m, int n, Eigen::Index T, Rng& rng) {
  std::vector<Trajectory> trs;
  for (int i = 0; i < n; ++i) {
    SampleOptions o;
    o.noiseless = true;
    if (m.du > 0) o.exogenous_us = random_matrix(m.du, T, rng);
    Trajectory tr = sample_trajectory(m, T, rng, o).traj;
    tr.xs.col(0) += random_vector(m.dx, rng);
    // Re-roll from the perturbed start so every trajectory differs.
    for (Eigen::Index t = 0; t + 1 < T; ++t) {
      const Mat psi = transition_matrix(m.transition, tr.xs.col(t), tr.us.col(t));
      Eigen::Index z;
      psi.col(0).maxCoeff(&z);
      tr.xs.col(t + 1) = step_dynamics_mean(m, static_cast<int>(z), tr.xs.col(t), tr.us.col(t));
    }
    trs.push_back(tr);
  }
  return Dataset::from(trs);
}

}  // namespace

TEST_CASE("nmse examples") {
  Mat preds(2, 2), truths = Mat::Zero(2, 2);
  preds << 1.0, 0.0, 0.0, 1.0;
  CHECK(nmse(preds, truths, Vec::Ones(2)) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(nmse(truths, truths, Vec::Ones(2)) == 0.0);
  CHECK_THROWS_AS(nmse(preds, truths, Vec::Zero(2)), std::invalid_argument);
  CHECK_THROWS_AS(nmse(Mat(2, 0), Mat(2, 0), Vec::Ones(2)), std::invalid_argument);
}

TEST_CASE("mean predictor scores one") {
  Rng rng(1);
  std::vector<Trajectory> trs;
  for (int n = 0; n < 4; ++n) {
    Trajectory tr;
    tr.xs = random_matrix(2, 500, rng);
    tr.xs.row(1) *= 30.0;
    tr.us = Mat::Zero(0, 500);
    trs.push_back(tr);
  }
  const Dataset d = Dataset::from(trs);
  const Vec var = state_variance(d);
  Mat all(2, 2000);
  for (int n = 0; n < 4; ++n) all.middleCols(500 * n, 500) = trs[static_cast<std::size_t>(n)].xs;
  const Vec mean = all.rowwise().mean();
  const Mat preds = mean.replicate(1, 2000);
  CHECK(nmse(preds, all, var) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("nmse grows with corruption") {
  Rng rng(2);
  const Mat truth = random_matrix(3, 100, rng);
  const Mat noise = random_matrix(3, 100, rng);
  double last = -1.0;
  for (double s : {0.0, 0.01, 0.1, 1.0, 10.0}) {
    const double v = nmse(truth + s * noise, truth, Vec::Ones(3));
    CHECK(v > last);
    last = v;
  }
}

TEST_CASE("prefix filtering") {
  SUBCASE("single regime") {
    Rng rng(3);
    HybridModel m = random_model(rng, 1, 2, 1);
    Trajectory tr = random_trajectory(m, 10, rng);
    CHECK(filter_prefix(m, tr, 5)[0] == 1.0);
  }
  SUBCASE("uninformative evidence returns the prior") {
    HybridModel m = make_model(3, 1, 0, LoopMode::OpenLoop, TransitionModel::stationary(3, 1, 0));
    m.init.pi << 0.2, 0.3, 0.5;
    Trajectory tr;
    tr.xs = Mat::Zero(1, 4);
    tr.us = Mat::Zero(0, 4);
    CHECK(max_abs_diff(filter_prefix(m, tr, 1), m.init.pi) < 1e-15);
  }
  SUBCASE("seed 5 matches enumeration of the prefix") {
    Rng rng(5);
    HybridModel m = random_model(rng, 2, 2, 1, LoopMode::OpenLoop, LinkKind::Linear);
    Trajectory tr = random_trajectory(m, 8, rng);
    for (Eigen::Index t = 1; t <= 8; ++t) {
      Trajectory prefix = tr;
      prefix.xs = tr.xs.leftCols(t);
      prefix.us = tr.us.leftCols(t);
      const Vec want = brute_force_posterior(log_local_evidence(m, prefix), transition_matrices(m, prefix), m.init.pi)
                           .gamma.row(t - 1)
                           .transpose();
      CHECK(max_abs_diff(filter_prefix(m, tr, t), want) < 1e-10);
    }
  }
  CHECK_THROWS_AS(filter_prefix(noiseless_linear_model(), Trajectory{Mat::Zero(2, 3), Mat::Zero(1, 3), 1.0, ""}, 0),
                  std::out_of_range);
}

TEST_CASE("single-regime forecasts are linear rollouts") {
  const HybridModel m = noiseless_linear_model();
  Rng rng(6);
  const Dataset d = noiseless_dataset(m, 1, 30, rng);
  const Trajectory& tr = d.trajectories[0];
  const Mat f = forecast(m, tr, 4, 10, ForecastMode::Marginal);
  Vec x = tr.xs.col(4);
  for (int k = 0; k < 10; ++k) {
    x = m.dynamics[0].A * x + m.dynamics[0].B * tr.us.col(4 + k) + m.dynamics[0].c;
    CHECK(max_abs_diff(f.col(k), x) < 1e-12);
    CHECK(max_abs_diff(f.col(k), tr.xs.col(5 + k)) < 1e-12);
  }
  CHECK_THROWS_AS(forecast(m, tr, 25, 5, ForecastMode::Marginal), std::out_of_range);
  CHECK_THROWS_AS(forecast(m, tr, 1, 3, ForecastMode::Sample), std::invalid_argument);
}

TEST_CASE("saturated ball model forecast equals a hand-stepped piecewise rollout") {
  const HybridModel m = saturated_ball_model();
  Trajectory tr;
  tr.xs.resize(2, 30);
  tr.us = Mat::Zero(0, 30);
  tr.xs.col(0) << 1.0, 0.0;
  const double dt = 0.05, g = 9.81, e = 0.8;
  auto hand_step = [&](const Vec& s) {
    Vec n(2);
    n << s[0] + s[1] * dt - 0.5 * g * dt * dt, s[1] - g * dt;
    if (s[0] < 0.0) n = -e * n;  // the regime entered follows the sign of the current height
    return n;
  };
  for (Eigen::Index t = 0; t + 1 < 30; ++t) tr.xs.col(t + 1) = hand_step(tr.xs.col(t));
  for (Eigen::Index t0 : {2, 8, 15}) {
    const Mat f = forecast(m, tr, t0, 5, ForecastMode::Marginal);
    for (int k = 0; k < 5; ++k) CHECK(max_abs_diff(f.col(k), tr.xs.col(t0 + 1 + k)) < 1e-9);
  }
}

TEST_CASE("marginal and argmax agree on one-hot beliefs") {
  Rng rng(7);
  HybridModel m = random_model(rng, 3, 2, 1);
  Vec b = Vec::Zero(3);
  b[1] = 1.0;
  for (auto& d : m.dynamics) d.lam_cov = 1e-6 * Mat::Identity(2, 2);
  m.transition = TransitionModel::stationary(3, 2, 1);
  m.transition.bias = 1e3 * Mat::Identity(3, 3);
  const Mat us = random_matrix(1, 6, rng);
  const Vec x = random_vector(2, rng);
  CHECK(identical(forecast_from(m, b, x, us, ForecastMode::Marginal), forecast_from(m, b, x, us, ForecastMode::Argmax)));
}

TEST_CASE("parameter counts") {
  HybridModel one = make_model(1, 1, 0, LoopMode::OpenLoop, TransitionModel::stationary(1, 1, 0));
  CHECK(count_params(one) == 5);
  HybridModel ball = make_model(2, 2, 0, LoopMode::OpenLoop, TransitionModel::stationary(2, 2, 0));
  CHECK(count_params(ball) == 22);
  HybridModel four = make_model(4, 2, 0, LoopMode::OpenLoop, TransitionModel::stationary(4, 2, 0));
  CHECK(count_params(four) == 22 + 2 + (16 - 4) + 2 * 8);
  HybridModel mlp = make_model(2, 2, 0, LoopMode::OpenLoop, TransitionModel::perceptron(2, 2, 0, 16));
  CHECK(count_params(mlp) == 22 + 16 * 2 + 16 + 2 * 16 + 2);
  HybridModel closed = make_model(5, 2, 1, LoopMode::ClosedLoop, TransitionModel::linear(5, 2, 1), 1);
  CHECK(count_params(closed) == 5 + 25 + 5 * 3 + 5 * (4 + 2 + 2 + 2) + 5 * (3 + 1 + 1));
}

TEST_CASE("evaluation report") {
  const HybridModel m = noiseless_linear_model();
  Rng rng(8);
  const Dataset test = noiseless_dataset(m, 3, 40, rng);
  EvalOptions opts;
  opts.horizons = {1, 5, 20};

  SUBCASE("ground truth scores zero") {
    const EvalReport r = evaluate({{"truth", {m}}}, test, opts);
    REQUIRE(r.rows.size() == 3);
    for (const auto& row : r.rows) {
      CHECK(row.nmse_mean < 1e-20);
      CHECK(row.n_splits == 1);
    }
    CHECK(r.param_counts.at(0).params == count_params(m));
  }
  SUBCASE("duplicated split leaves mean and std unchanged") {
    HybridModel other = m;
    other.dynamics[0].c << 0.1, 0.0;
    const EvalReport a = evaluate({{"x", {m, other}}}, test, opts);
    const EvalReport b = evaluate({{"x", {m, other, m, other}}}, test, opts);
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
      CHECK(b.rows[i].nmse_mean == doctest::Approx(a.rows[i].nmse_mean).epsilon(1e-14));
      CHECK(b.rows[i].nmse_std == doctest::Approx(a.rows[i].nmse_std).epsilon(1e-12));
    }
  }
  SUBCASE("CSV output is deterministic with fixed columns") {
    const EvalReport a = evaluate({{"m", {m}}}, test, opts);
    std::ostringstream x, y;
    a.write_csv(x);
    evaluate({{"m", {m}}}, test, opts).write_csv(y);
    CHECK(x.str() == y.str());
    CHECK(x.str().rfind("model_tag,K,h,nmse_mean,nmse_std,n_splits\n", 0) == 0);
  }
  SUBCASE("horizon beyond every trajectory is an error") {
    opts.horizons = {50};
    CHECK_THROWS(evaluate({{"m", {m}}}, test, opts));
  }
}

TEST_CASE("in-class switching model forecasts noiselessly") {
  const HybridModel m = saturated_ball_model();
  std::vector<Trajectory> trs;
  for (double h0 : {1.0, 2.0, 3.5}) {
    Trajectory tr;
    tr.xs.resize(2, 120);
    tr.us = Mat::Zero(0, 120);
    tr.xs.col(0) << h0, 0.0;
    for (Eigen::Index t = 0; t + 1 < 120; ++t) {
      const int z = tr.xs(0, t) > 0.0 ? 0 : 1;
      tr.xs.col(t + 1) = step_dynamics_mean(m, z, tr.xs.col(t), Vec::Zero(0));
    }
    trs.push_back(tr);
  }
  const Dataset test = Dataset::from(trs);
  const auto v = horizon_nmse(m, test, {20}, state_variance(test));
  CHECK(v[0] < 1e-6);
}
