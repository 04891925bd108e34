#include "hsid/learning.hpp"

#include "hsid/features.hpp"

#include <ceres/gradient_problem.h>
#include <ceres/gradient_problem_solver.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace hsid {
namespace {

constexpr double kMinRegimeWeight = 1e-12;

void add_warning(std::vector<std::string>* warnings, std::string msg) {
  if (warnings == nullptr) return;
  if (std::find(warnings->begin(), warnings->end(), msg) == warnings->end()) {
    warnings->push_back(std::move(msg));
  }
}

struct Regression {
  Mat coef;  // targets x design
  Mat cov;
};

// Weighted least squares of Y (m x N) on X (p x N) with weights w (N).
Regression weighted_regression(const Mat& X, const Mat& Y, const Vec& w, double total, double ridge,
                               double floor, const std::string& what) {
  const Mat Xw = X * w.asDiagonal();
  Mat S = Xw * X.transpose();
  S.diagonal().array() += ridge;
  const Mat b = Xw * Y.transpose();
  Eigen::LLT<Mat> llt(S);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error(what + ": normal equations are rank-deficient after ridge");
  }
  Regression out;
  out.coef = llt.solve(b).transpose();
  if (!out.coef.allFinite()) {
    throw std::runtime_error(what + ": regression produced non-finite coefficients");
  }
  const Mat R = Y - out.coef * X;
  out.cov = floor_covariance((R * w.asDiagonal() * R.transpose()) / total, floor);
  return out;
}

void check_posteriors(std::span<const Posterior> posteriors, const Dataset& data) {
  if (posteriors.size() != data.trajectories.size()) {
    throw std::invalid_argument("mstep: one posterior per trajectory required");
  }
  for (std::size_t n = 0; n < posteriors.size(); ++n) {
    if (posteriors[n].gamma.rows() != data.trajectories[n].length()) {
      throw std::invalid_argument("mstep: posterior length does not match trajectory " +
                                  std::to_string(n));
    }
  }
}

// Step-wise weights gamma_t(k) for steps t in [first, T) of every trajectory.
Vec stacked_weights(std::span<const Posterior> posteriors, const Dataset& data, int k,
                    Eigen::Index first) {
  Eigen::Index n_total = 0;
  for (const auto& tr : data.trajectories) n_total += tr.length() - first;
  Vec w(n_total);
  Eigen::Index col = 0;
  for (std::size_t n = 0; n < posteriors.size(); ++n) {
    const auto T = data.trajectories[n].length();
    w.segment(col, T - first) = posteriors[n].gamma.col(k).segment(first, T - first);
    col += T - first;
  }
  return w;
}

std::vector<std::vector<Mat>> collect_xis(std::span<const Posterior> posteriors) {
  std::vector<std::vector<Mat>> xis;
  xis.reserve(posteriors.size());
  for (const auto& p : posteriors) xis.push_back(p.xi);
  return xis;
}

struct EStepWithQ {
  std::vector<Posterior> posteriors;
  double loglik = 0.0;
  double q = 0.0;
};

EStepWithQ estep_with_q(const HybridModel& model, const Dataset& data) {
  EStepWithQ out;
  const Vec log_pi = model.init.pi.array().log().matrix();
  for (const auto& tr : data.trajectories) {
    const Mat ev = log_local_evidence(model, tr);
    const auto trans = transition_matrices(model, tr);
    Posterior post = smooth(ev, trans, model.init.pi);
    out.loglik += post.loglik;
    double q = 0.0;
    for (Eigen::Index k = 0; k < ev.cols(); ++k) {
      if (post.gamma(0, k) > 0.0) q += post.gamma(0, k) * log_pi[k];
    }
    q += post.gamma.cwiseProduct(ev).sum();
    for (std::size_t t = 0; t < trans.size(); ++t) {
      const Mat& xi = post.xi[t];
      for (Eigen::Index j = 0; j < xi.rows(); ++j) {
        for (Eigen::Index i = 0; i < xi.cols(); ++i) {
          if (xi(j, i) > 0.0) q += xi(j, i) * std::log(trans[t](i, j));
        }
      }
    }
    out.q += q;
    out.posteriors.push_back(std::move(post));
  }
  return out;
}

// Per-transition average NLL of the link, so tolerances do not scale with data size.
class GlmObjective final : public ceres::FirstOrderFunction {
 public:
  GlmObjective(const TransitionBatch& batch, const TransitionModel& shape)
      : batch_(batch), shape_(shape), scale_(1.0 / batch.total_weight()),
        n_(static_cast<int>(shape.flat().size())) {}

  bool Evaluate(const double* parameters, double* cost, double* gradient) const override {
    const Vec theta = Eigen::Map<const Vec>(parameters, NumParameters());
    if (gradient == nullptr) {
      *cost = batch_.value(shape_, theta) * scale_;
      return std::isfinite(*cost);
    }
    const NllGrad r = batch_.evaluate(shape_, theta);
    *cost = r.value * scale_;
    if (!std::isfinite(*cost) || !r.grad.allFinite()) return false;
    Eigen::Map<Vec>(gradient, NumParameters()) = r.grad * scale_;
    return true;
  }

  int NumParameters() const override { return n_; }

 private:
  const TransitionBatch& batch_;
  const TransitionModel& shape_;
  double scale_;
  int n_;
};

}  // namespace

void FitConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("fit config: ") + what);
  };
  require(K >= 1, "K must be >= 1");
  require(max_iters >= 1, "max_iters must be >= 1");
  require(rel_tol > 0.0, "rel_tol must be positive");
  require(restarts >= 1, "restarts must be >= 1");
  require(covariance_floor > 0.0, "covariance_floor must be positive");
  require(ridge >= 0.0, "ridge must be nonnegative");
  require(glm_steps >= 0, "glm_steps must be >= 0");
  require(lag >= 0, "lag must be >= 0");
  require(poly_degree >= 1, "poly_degree must be >= 1");
  require(transition_degree >= 1, "transition degree must be >= 1");
  require(hidden_units >= 1, "hidden_units must be >= 1");
  require(kmeans_iters >= 1, "kmeans_iters must be >= 1");
}

TransitionModel FitConfig::make_transition(int dx, int du) const {
  switch (transition_kind) {
    case LinkKind::Stationary: return TransitionModel::stationary(K, dx, du);
    case LinkKind::Linear: return TransitionModel::linear(K, dx, du, per_pair);
    case LinkKind::Polynomial: return TransitionModel::polynomial(K, dx, du, transition_degree, per_pair);
    case LinkKind::Perceptron: return TransitionModel::perceptron(K, dx, du, hidden_units);
  }
  throw std::invalid_argument("fit config: unknown transition kind");
}

void FitHistory::write_csv(std::ostream& os, bool with_time) const {
  const auto old_precision = os.precision(17);
  os << "iter,loglik,q_value,seconds\n";
  for (std::size_t i = 0; i < loglik.size(); ++i) {
    os << i << ',' << loglik[i] << ',' << q_value[i] << ',' << (with_time ? seconds[i] : 0.0) << '\n';
  }
  os.precision(old_precision);
}

std::vector<std::vector<int>> initial_labels(const Dataset& data, const FitConfig& config, Rng& rng) {
  data.validate();
  const int K = config.K;
  const int dim = 2 * data.dx;
  Eigen::Index n_points = 0;
  for (const auto& tr : data.trajectories) n_points += tr.length() - 1;
  Mat pts(dim, n_points);
  Eigen::Index col = 0;
  for (const auto& tr : data.trajectories) {
    for (Eigen::Index t = 1; t < tr.length(); ++t, ++col) {
      pts.col(col).head(data.dx) = tr.xs.col(t - 1);
      pts.col(col).tail(data.dx) = tr.xs.col(t) - tr.xs.col(t - 1);
    }
  }
  const Vec mean = pts.rowwise().mean();
  pts.colwise() -= mean;
  Vec sd = (pts.array().square().rowwise().sum() / static_cast<double>(n_points)).sqrt().matrix();
  for (Eigen::Index i = 0; i < sd.size(); ++i) {
    if (!(sd[i] > 1e-12)) sd[i] = 1.0;
  }
  pts = sd.cwiseInverse().asDiagonal() * pts;

  // Need at least K distinct points.
  std::vector<Eigen::Index> distinct;
  for (Eigen::Index p = 0; p < n_points && static_cast<int>(distinct.size()) < K; ++p) {
    bool seen = false;
    for (auto q : distinct) {
      if (pts.col(p) == pts.col(q)) {
        seen = true;
        break;
      }
    }
    if (!seen) distinct.push_back(p);
  }
  if (static_cast<int>(distinct.size()) < K) {
    throw std::invalid_argument("initialize: fewer distinct points than K = " + std::to_string(K));
  }

  // k-means++ seeding.
  Mat centers(dim, K);
  centers.col(0) = pts.col(static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::size_t>(n_points))));
  Vec d2 = (pts.colwise() - centers.col(0)).colwise().squaredNorm().transpose();
  for (int k = 1; k < K; ++k) {
    centers.col(k) = pts.col(rng.categorical(d2));
    d2 = d2.cwiseMin((pts.colwise() - centers.col(k)).colwise().squaredNorm().transpose());
  }

  std::vector<int> assign(static_cast<std::size_t>(n_points), 0);
  Vec best_d(n_points);
  for (int iter = 0; iter < config.kmeans_iters; ++iter) {
    for (Eigen::Index p = 0; p < n_points; ++p) {
      Eigen::Index arg = 0;
      best_d[p] = (centers.colwise() - pts.col(p)).colwise().squaredNorm().minCoeff(&arg);
      assign[static_cast<std::size_t>(p)] = static_cast<int>(arg);
    }
    Mat sums = Mat::Zero(dim, K);
    Vec counts = Vec::Zero(K);
    for (Eigen::Index p = 0; p < n_points; ++p) {
      sums.col(assign[static_cast<std::size_t>(p)]) += pts.col(p);
      counts[assign[static_cast<std::size_t>(p)]] += 1.0;
    }
    for (int k = 0; k < K; ++k) {
      if (counts[k] > 0.0) {
        centers.col(k) = sums.col(k) / counts[k];
      } else {
        // Empty cluster: move it to the worst-fit point.
        Eigen::Index far = 0;
        best_d.maxCoeff(&far);
        centers.col(k) = pts.col(far);
        best_d[far] = 0.0;
      }
    }
  }
  for (Eigen::Index p = 0; p < n_points; ++p) {
    Eigen::Index arg = 0;
    (centers.colwise() - pts.col(p)).colwise().squaredNorm().minCoeff(&arg);
    assign[static_cast<std::size_t>(p)] = static_cast<int>(arg);
  }

  std::vector<std::vector<int>> labels;
  col = 0;
  for (const auto& tr : data.trajectories) {
    std::vector<int> lab(static_cast<std::size_t>(tr.length()));
    for (Eigen::Index t = 1; t < tr.length(); ++t, ++col) {
      lab[static_cast<std::size_t>(t)] = assign[static_cast<std::size_t>(col)];
    }
    lab[0] = lab[1];
    labels.push_back(std::move(lab));
  }
  return labels;
}

HybridModel initialize(const Dataset& data, const FitConfig& config, Rng& rng) {
  config.validate();
  const auto labels = initial_labels(data, config, rng);
  const int K = config.K;

  HybridModel model = make_model(K, data.dx, data.du, config.mode,
                                 config.make_transition(data.dx, data.du), config.lag,
                                 config.poly_degree);
  auto& tm = model.transition;
  tm.standardizer = Standardizer::fit(data);
  tm.bias = 2.0 * Mat::Identity(K, K);
  for (Eigen::Index i = 0; i < tm.params.size(); ++i) tm.params[i] = 0.01 * rng.normal();
  if (tm.kind == LinkKind::Perceptron) {
    // Hidden layer at unit scale so the output layer sees O(1) activations.
    const int rows = tm.hidden_units * tm.input_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(tm.input_dim()));
    for (int i = 0; i < rows; ++i) tm.params[i] = scale * rng.normal();
  }

  std::vector<Posterior> hard;
  for (std::size_t n = 0; n < data.trajectories.size(); ++n) {
    const auto T = data.trajectories[n].length();
    Posterior p;
    p.gamma = Mat::Zero(T, K);
    p.xi.assign(static_cast<std::size_t>(T - 1), Mat::Zero(K, K));
    for (Eigen::Index t = 0; t < T; ++t) {
      p.gamma(t, labels[n][static_cast<std::size_t>(t)]) = 1.0;
      if (t + 1 < T) {
        p.xi[static_cast<std::size_t>(t)](labels[n][static_cast<std::size_t>(t)],
                                          labels[n][static_cast<std::size_t>(t + 1)]) = 1.0;
      }
    }
    hard.push_back(std::move(p));
  }
  model.init = mstep_initial(hard, data, config.covariance_floor, model.init);
  model.dynamics = mstep_dynamics(hard, data, config.covariance_floor, model.dynamics, nullptr, config.ridge);
  if (config.mode == LoopMode::ClosedLoop) {
    model.controllers = mstep_controller(hard, data, config.lag, config.poly_degree,
                                         config.covariance_floor, model.controllers, nullptr,
                                         config.ridge, config.zero_offset);
  }
  return model;
}

InitialModel mstep_initial(std::span<const Posterior> posteriors, const Dataset& data, double floor,
                           const InitialModel& previous, std::vector<std::string>* warnings) {
  check_posteriors(posteriors, data);
  const auto K = posteriors.front().gamma.cols();
  InitialModel out = previous;
  Vec weights = Vec::Zero(K);
  for (const auto& p : posteriors) weights += p.gamma.row(0).transpose();
  out.pi = weights / weights.sum();
  for (Eigen::Index k = 0; k < K; ++k) {
    if (weights[k] < kMinRegimeWeight) {
      add_warning(warnings, "regime " + std::to_string(k) +
                                " has no initial-state responsibility; initial Gaussian frozen");
      continue;
    }
    Vec mu = Vec::Zero(data.dx);
    for (std::size_t n = 0; n < posteriors.size(); ++n) {
      mu += posteriors[n].gamma(0, k) * data.trajectories[n].xs.col(0);
    }
    mu /= weights[k];
    Mat cov = Mat::Zero(data.dx, data.dx);
    for (std::size_t n = 0; n < posteriors.size(); ++n) {
      const Vec r = data.trajectories[n].xs.col(0) - mu;
      cov += posteriors[n].gamma(0, k) * r * r.transpose();
    }
    out.mu[static_cast<std::size_t>(k)] = mu;
    out.omega_cov[static_cast<std::size_t>(k)] = floor_covariance(cov / weights[k], floor);
  }
  return out;
}

std::vector<RegimeDynamics> mstep_dynamics(std::span<const Posterior> posteriors, const Dataset& data,
                                           double floor, std::span<const RegimeDynamics> previous,
                                           std::vector<std::string>* warnings, double ridge) {
  check_posteriors(posteriors, data);
  const auto K = posteriors.front().gamma.cols();
  if (static_cast<Eigen::Index>(previous.size()) != K) {
    throw std::invalid_argument("mstep_dynamics: need K previous regimes");
  }
  const int dx = data.dx;
  const int du = data.du;
  const int p = dx + du + 1;
  Eigen::Index n_total = 0;
  for (const auto& tr : data.trajectories) {
    if (tr.length() < 2) throw std::invalid_argument("mstep_dynamics: trajectories need T >= 2");
    n_total += tr.length() - 1;
  }
  Mat X(p, n_total);
  Mat Y(dx, n_total);
  Eigen::Index col = 0;
  for (const auto& tr : data.trajectories) {
    const auto m = tr.length() - 1;
    X.block(0, col, dx, m) = tr.xs.leftCols(m);
    X.block(dx, col, du, m) = tr.us.leftCols(m);
    X.block(dx + du, col, 1, m).setOnes();
    Y.middleCols(col, m) = tr.xs.rightCols(m);
    col += m;
  }

  std::vector<RegimeDynamics> out(previous.begin(), previous.end());
  for (Eigen::Index k = 0; k < K; ++k) {
    const Vec w = stacked_weights(posteriors, data, static_cast<int>(k), 1);
    const double total = w.sum();
    if (total < kMinRegimeWeight) {
      add_warning(warnings, "regime " + std::to_string(k) + " has no responsibility; dynamics frozen");
      continue;
    }
    const auto fit = weighted_regression(X, Y, w, total, ridge, floor,
                                         "mstep_dynamics: regime " + std::to_string(k));
    auto& d = out[static_cast<std::size_t>(k)];
    d.A = fit.coef.leftCols(dx);
    d.B = fit.coef.middleCols(dx, du);
    d.c = fit.coef.col(dx + du);
    d.lam_cov = fit.cov;
  }
  return out;
}

std::vector<RegimeController> mstep_controller(std::span<const Posterior> posteriors,
                                               const Dataset& data, int lag, int poly_degree,
                                               double floor, std::span<const RegimeController> previous,
                                               std::vector<std::string>* warnings, double ridge,
                                               bool zero_offset) {
  check_posteriors(posteriors, data);
  const auto K = posteriors.front().gamma.cols();
  if (static_cast<Eigen::Index>(previous.size()) != K) {
    throw std::invalid_argument("mstep_controller: need K previous controllers");
  }
  if (data.du < 1) throw std::invalid_argument("mstep_controller: closed loop needs du >= 1");
  const int dphi = controller_feature_dim(data.dx, data.du, lag, poly_degree);
  const int p = dphi + (zero_offset ? 0 : 1);
  const auto n_total = data.steps();
  Mat X(p, n_total);
  Mat Y(data.du, n_total);
  Eigen::Index col = 0;
  for (const auto& tr : data.trajectories) {
    for (Eigen::Index t = 0; t < tr.length(); ++t, ++col) {
      X.col(col).head(dphi) = controller_features_at(tr.xs.col(t), tr.us, t, lag, poly_degree);
      if (!zero_offset) X(dphi, col) = 1.0;
      Y.col(col) = tr.us.col(t);
    }
  }

  std::vector<RegimeController> out(previous.begin(), previous.end());
  for (Eigen::Index k = 0; k < K; ++k) {
    const Vec w = stacked_weights(posteriors, data, static_cast<int>(k), 0);
    const double total = w.sum();
    if (total < kMinRegimeWeight) {
      add_warning(warnings, "regime " + std::to_string(k) + " has no responsibility; controller frozen");
      continue;
    }
    const auto fit = weighted_regression(X, Y, w, total, ridge, floor,
                                         "mstep_controller: regime " + std::to_string(k));
    auto& c = out[static_cast<std::size_t>(k)];
    c.gain = fit.coef.leftCols(dphi);
    c.offset = zero_offset ? Vec::Zero(data.du) : Vec(fit.coef.col(dphi));
    c.sigma_cov = fit.cov;
  }
  return out;
}

double transition_q(std::span<const Posterior> posteriors, const Dataset& data,
                    const TransitionModel& tm) {
  const auto xis = collect_xis(posteriors);
  const TransitionBatch batch(tm, data, xis);
  return -batch.value(tm, tm.flat());
}

TransitionModel mstep_transitions(std::span<const Posterior> posteriors, const Dataset& data,
                                  const TransitionModel& tm_hat, const FitConfig& config) {
  check_posteriors(posteriors, data);
  const auto xis = collect_xis(posteriors);
  const TransitionBatch batch(tm_hat, data, xis);
  const int K = tm_hat.K;
  const Vec theta0 = tm_hat.flat();
  const double f0 = batch.value(tm_hat, theta0);

  if (tm_hat.kind == LinkKind::Stationary) {
    // Lagrangian solution: psi_ij proportional to the expected j -> i counts.
    const Mat counts = batch.counts();
    TransitionModel out = tm_hat;
    for (int j = 0; j < K; ++j) {
      const double total = counts.col(j).sum();
      if (!(total > kMinRegimeWeight)) continue;
      for (int i = 0; i < K; ++i) {
        out.bias(i, j) = std::log(std::max(counts(i, j) / total, kMinTransitionProb));
      }
    }
    return batch.value(out, out.flat()) <= f0 + 1e-12 ? out : tm_hat;
  }

  if (config.glm_steps == 0 || batch.total_weight() <= 0.0) return tm_hat;
  ceres::GradientProblemSolver::Options options;
  options.line_search_direction_type = ceres::LBFGS;
  options.max_num_iterations = config.glm_steps;
  options.logging_type = ceres::SILENT;
  options.minimizer_progress_to_stdout = false;
  options.function_tolerance = 1e-12;
  options.gradient_tolerance = 1e-10;
  options.parameter_tolerance = 1e-12;
  ceres::GradientProblem problem(new GlmObjective(batch, tm_hat));
  Vec theta = theta0;
  ceres::GradientProblemSolver::Summary summary;
  ceres::Solve(options, problem, theta.data(), &summary);
  if (!theta.allFinite()) {
    throw std::runtime_error("mstep_transitions: optimizer produced non-finite parameters (" +
                             summary.message + ")");
  }
  TransitionModel out = tm_hat;
  out.set_flat(theta);
  return batch.value(out, theta) <= f0 + 1e-12 ? out : tm_hat;
}

FitResult fit_em_from(const Dataset& data, const FitConfig& config, HybridModel start) {
  config.validate();
  data.validate();
  start.validate();
  if (start.dx != data.dx || start.du != data.du) {
    throw std::invalid_argument("fit_em: model dimensions do not match the dataset");
  }
  FitResult res;
  res.model = std::move(start);
  auto& model = res.model;
  const auto t0 = std::chrono::steady_clock::now();
  double prev = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < config.max_iters; ++it) {
    const EStepWithQ e = estep_with_q(model, data);
    if (!std::isfinite(e.loglik)) throw std::runtime_error("fit_em: non-finite log-likelihood");
    res.history.loglik.push_back(e.loglik);
    res.history.q_value.push_back(e.q);
    res.history.seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    if (it > 0 && e.loglik - prev < config.rel_tol * std::abs(prev)) break;
    if (it + 1 == config.max_iters) break;
    prev = e.loglik;

    model.init = mstep_initial(e.posteriors, data, config.covariance_floor, model.init, &res.warnings);
    model.dynamics = mstep_dynamics(e.posteriors, data, config.covariance_floor, model.dynamics,
                                    &res.warnings, config.ridge);
    if (model.mode == LoopMode::ClosedLoop) {
      model.controllers = mstep_controller(e.posteriors, data, model.lag, model.poly_degree,
                                           config.covariance_floor, model.controllers,
                                           &res.warnings, config.ridge, config.zero_offset);
    }
    model.transition = mstep_transitions(e.posteriors, data, model.transition, config);
  }
  res.restart_histories.push_back(res.history);
  res.restart_errors.emplace_back();
  return res;
}

FitResult fit_em(const Dataset& data, const FitConfig& config) {
  config.validate();
  data.validate();
  FitResult best;
  bool have_best = false;
  std::vector<FitHistory> histories;
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  for (int r = 0; r < config.restarts; ++r) {
    try {
      Rng rng(config.seed + static_cast<std::uint64_t>(r));
      FitResult run = fit_em_from(data, config, initialize(data, config, rng));
      histories.push_back(run.history);
      errors.emplace_back();
      for (auto& w : run.warnings) add_warning(&warnings, "restart " + std::to_string(r) + ": " + w);
      if (!have_best || run.history.loglik.back() > best.history.loglik.back()) {
        best = std::move(run);
        best.best_restart = r;
        have_best = true;
      }
    } catch (const std::exception& ex) {
      histories.emplace_back();
      errors.emplace_back(ex.what());
    }
  }
  if (!have_best) {
    std::string msg = "fit_em: all " + std::to_string(config.restarts) + " restarts failed";
    if (!errors.empty()) msg += " (first error: " + errors.front() + ")";
    throw std::runtime_error(msg);
  }
  best.restart_histories = std::move(histories);
  best.restart_errors = std::move(errors);
  best.warnings = std::move(warnings);
  return best;
}

double dataset_loglik(const HybridModel& model, const Dataset& data) {
  return estep(model, data).total_loglik;
}

}  // namespace hsid
