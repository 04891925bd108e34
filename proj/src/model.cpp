#include "hsid/model.hpp"

#include "hsid/features.hpp"

#include <cmath>
#include <stdexcept>

namespace hsid {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

void check_covariance(const Mat& cov, Eigen::Index dim, double floor, const std::string& what) {
  require(cov.rows() == dim && cov.cols() == dim, what + ": wrong shape");
  if (dim == 0) return;
  require(cov.allFinite(), what + ": non-finite entries");
  require(is_symmetric(cov, 1e-12), what + ": not symmetric");
  const double lo = min_eigenvalue(cov);
  require(floor > 0.0 ? lo >= floor * (1.0 - 1e-9) : lo > 0.0,
          what + ": minimum eigenvalue " + std::to_string(lo) + " below floor");
}

void check_regime(int z, int K) {
  if (z < 0 || z >= K) {
    throw std::out_of_range("regime index " + std::to_string(z) + " out of range [0, " +
                            std::to_string(K) + ")");
  }
}

std::vector<GaussianLogDensity> densities(const std::vector<Mat>& covs) {
  std::vector<GaussianLogDensity> out;
  out.reserve(covs.size());
  for (const auto& c : covs) out.emplace_back(c);
  return out;
}

}  // namespace

void Trajectory::validate() const {
  require(length() >= 2, "trajectory '" + id + "': needs T >= 2 steps");
  require(us.cols() == xs.cols(), "trajectory '" + id + "': xs and us lengths differ");
  require(dt > 0.0 && std::isfinite(dt), "trajectory '" + id + "': dt must be positive");
  require(xs.allFinite() && us.allFinite(), "trajectory '" + id + "': non-finite entries");
}

Dataset Dataset::from(std::vector<Trajectory> trajectories) {
  require(!trajectories.empty(), "dataset: no trajectories");
  Dataset d;
  d.dx = trajectories.front().dx();
  d.du = trajectories.front().du();
  d.trajectories = std::move(trajectories);
  d.validate();
  return d;
}

void Dataset::validate() const {
  require(!trajectories.empty(), "dataset: no trajectories");
  require(dx > 0, "dataset: state dimension must be positive");
  for (const auto& tr : trajectories) {
    tr.validate();
    require(tr.dx() == dx && tr.du() == du, "dataset: trajectory '" + tr.id + "' has dims (" +
                                                std::to_string(tr.dx()) + ", " +
                                                std::to_string(tr.du()) + "), expected (" +
                                                std::to_string(dx) + ", " + std::to_string(du) + ")");
  }
}

Eigen::Index Dataset::steps() const {
  Eigen::Index n = 0;
  for (const auto& tr : trajectories) n += tr.length();
  return n;
}

std::string to_string(LoopMode mode) {
  return mode == LoopMode::OpenLoop ? "open" : "closed";
}

int HybridModel::controller_feature_dim() const {
  return hsid::controller_feature_dim(dx, du, lag, poly_degree);
}

void HybridModel::validate(double covariance_floor) const {
  require(K >= 1, "model: K must be >= 1");
  require(dx >= 1 && du >= 0, "model: invalid dimensions");
  require(init.pi.size() == K, "model: pi must have K entries");
  require((init.pi.array() >= 0.0).all() && std::abs(init.pi.sum() - 1.0) <= 1e-12,
          "model: pi is not a probability vector");
  require(static_cast<int>(init.mu.size()) == K && static_cast<int>(init.omega_cov.size()) == K,
          "model: initial Gaussians must have K entries");
  require(static_cast<int>(dynamics.size()) == K, "model: need K dynamics regimes");
  for (int k = 0; k < K; ++k) {
    const auto tag = "regime " + std::to_string(k);
    require(init.mu[k].size() == dx && init.mu[k].allFinite(), "model: mu of " + tag);
    check_covariance(init.omega_cov[k], dx, covariance_floor, "model: omega_cov of " + tag);
    const auto& d = dynamics[k];
    require(d.A.rows() == dx && d.A.cols() == dx && d.A.allFinite(), "model: A of " + tag);
    require(d.B.rows() == dx && d.B.cols() == du && d.B.allFinite(), "model: B of " + tag);
    require(d.c.size() == dx && d.c.allFinite(), "model: c of " + tag);
    check_covariance(d.lam_cov, dx, covariance_floor, "model: lam_cov of " + tag);
  }
  if (mode == LoopMode::OpenLoop) {
    require(controllers.empty(), "model: open-loop model must not carry controllers");
  } else {
    require(du >= 1, "model: closed-loop mode needs du >= 1");
    require(lag >= 0 && poly_degree >= 1, "model: invalid controller lag/degree");
    require(static_cast<int>(controllers.size()) == K, "model: need K controllers");
    const int dphi = controller_feature_dim();
    for (int k = 0; k < K; ++k) {
      const auto tag = "controller " + std::to_string(k);
      const auto& c = controllers[k];
      require(c.gain.rows() == du && c.gain.cols() == dphi && c.gain.allFinite(),
              "model: gain of " + tag);
      require(c.offset.size() == du && c.offset.allFinite(), "model: offset of " + tag);
      check_covariance(c.sigma_cov, du, covariance_floor, "model: sigma_cov of " + tag);
    }
  }
  require(transition.K == K && transition.dx == dx && transition.du == du,
          "model: transition shape does not match the model");
  transition.validate();
}

void HybridModel::check_trajectory(const Trajectory& traj) const {
  if (traj.dx() != dx || traj.du() != du) {
    throw std::invalid_argument("trajectory '" + traj.id + "' dims (" + std::to_string(traj.dx()) +
                                ", " + std::to_string(traj.du()) + ") do not match model (" +
                                std::to_string(dx) + ", " + std::to_string(du) + ")");
  }
  if (traj.us.cols() != traj.xs.cols()) {
    throw std::invalid_argument("trajectory '" + traj.id + "': xs and us lengths differ");
  }
}

HybridModel make_model(int K, int dx, int du, LoopMode mode, TransitionModel transition,
                       int lag, int poly_degree) {
  HybridModel m;
  m.K = K;
  m.dx = dx;
  m.du = du;
  m.mode = mode;
  m.lag = lag;
  m.poly_degree = poly_degree;
  m.init.pi = Vec::Constant(K, 1.0 / K);
  for (int k = 0; k < K; ++k) {
    m.init.mu.push_back(Vec::Zero(dx));
    m.init.omega_cov.push_back(Mat::Identity(dx, dx));
    m.dynamics.push_back(RegimeDynamics{Mat::Identity(dx, dx), Mat::Zero(dx, du), Vec::Zero(dx),
                                        Mat::Identity(dx, dx)});
    if (mode == LoopMode::ClosedLoop) {
      const int dphi = hsid::controller_feature_dim(dx, du, lag, poly_degree);
      m.controllers.push_back(
          RegimeController{Mat::Zero(du, dphi), Vec::Zero(du), Mat::Identity(du, du)});
    }
  }
  m.transition = std::move(transition);
  return m;
}

Vec predict_state(const HybridModel& model, int z, const Vec& x, const Vec& u) {
  check_regime(z, model.K);
  const auto& d = model.dynamics[z];
  Vec out = d.A * x + d.c;
  if (model.du > 0) out.noalias() += d.B * u;
  return out;
}

Vec step_dynamics_mean(const HybridModel& model, int z, const Vec& x, const Vec& u) {
  return predict_state(model, z, x, u);
}

Vec step_dynamics(const HybridModel& model, int z, const Vec& x, const Vec& u, Rng& rng) {
  const Vec mean = predict_state(model, z, x, u);
  return rng.gaussian(mean, GaussianLogDensity(model.dynamics[z].lam_cov).lower());
}

Vec controller_mean(const HybridModel& model, int z, const Vec& phi) {
  check_regime(z, model.K);
  if (model.mode != LoopMode::ClosedLoop) {
    throw std::invalid_argument("controller_mean: open-loop model has no controllers");
  }
  const auto& c = model.controllers[z];
  return c.gain * phi + c.offset;
}

InitialDraw sample_initial(const HybridModel& model, Rng& rng, const std::optional<Vec>& exogenous_u,
                           std::optional<int> fixed_regime) {
  InitialDraw draw;
  if (fixed_regime) {
    check_regime(*fixed_regime, model.K);
    draw.z = *fixed_regime;
  } else {
    draw.z = rng.categorical(model.init.pi);
  }
  draw.x = rng.gaussian(model.init.mu[draw.z], GaussianLogDensity(model.init.omega_cov[draw.z]).lower());
  if (model.mode == LoopMode::OpenLoop) {
    if (!exogenous_u && model.du == 0) {
      draw.u.resize(0);
      return draw;
    }
    if (!exogenous_u) {
      throw std::invalid_argument("sample_initial: open-loop model requires a caller-supplied u1");
    }
    if (exogenous_u->size() != model.du) {
      throw std::invalid_argument("sample_initial: exogenous control has the wrong dimension");
    }
    draw.u = *exogenous_u;
  } else {
    const Mat no_past(model.du, 0);
    const Vec phi = controller_features_at(draw.x, no_past, 0, model.lag, model.poly_degree);
    const auto& c = model.controllers[draw.z];
    draw.u = rng.gaussian(controller_mean(model, draw.z, phi), GaussianLogDensity(c.sigma_cov).lower());
  }
  return draw;
}

SampledPath sample_trajectory(const HybridModel& model, Eigen::Index T, Rng& rng,
                              const SampleOptions& options) {
  if (T < 1) throw std::invalid_argument("sample_trajectory: T must be positive");
  const bool open = model.mode == LoopMode::OpenLoop;
  // A system without inputs needs no exogenous controls.
  const Mat no_inputs(0, T);
  const Mat* exo = options.exogenous_us ? &*options.exogenous_us : (model.du == 0 ? &no_inputs : nullptr);
  if (open) {
    if (exo == nullptr) {
      throw std::invalid_argument("sample_trajectory: open-loop sampling needs exogenous controls");
    }
    if (exo->rows() != model.du || exo->cols() != T) {
      throw std::invalid_argument("sample_trajectory: exogenous controls must be du x T");
    }
  }
  std::vector<Mat> lam_lower, sigma_lower, omega_lower;
  for (int k = 0; k < model.K; ++k) {
    lam_lower.push_back(GaussianLogDensity(model.dynamics[k].lam_cov).lower());
    omega_lower.push_back(GaussianLogDensity(model.init.omega_cov[k]).lower());
    if (!open) sigma_lower.push_back(GaussianLogDensity(model.controllers[k].sigma_cov).lower());
  }
  auto noisy = [&](const Vec& mean, const Mat& lower) {
    return options.noiseless ? mean : rng.gaussian(mean, lower);
  };

  SampledPath out;
  out.traj.xs.resize(model.dx, T);
  out.traj.us.resize(model.du, T);
  out.traj.id = "sample";
  out.regimes.resize(static_cast<std::size_t>(T));

  int z = options.initial_regime ? *options.initial_regime : rng.categorical(model.init.pi);
  check_regime(z, model.K);
  Vec x = noisy(model.init.mu[z], omega_lower[z]);
  for (Eigen::Index t = 0; t < T; ++t) {
    if (t > 0) {
      const Vec xp = out.traj.xs.col(t - 1);
      const Vec up = out.traj.us.col(t - 1);
      z = rng.categorical(transition_probs(model.transition, z, xp, up));
      x = noisy(predict_state(model, z, xp, up), lam_lower[z]);
    }
    out.traj.xs.col(t) = x;
    out.regimes[static_cast<std::size_t>(t)] = z;
    if (open) {
      out.traj.us.col(t) = exo->col(t);
    } else {
      const Vec phi = controller_features_at(x, out.traj.us, t, model.lag, model.poly_degree);
      out.traj.us.col(t) = noisy(controller_mean(model, z, phi), sigma_lower[z]);
    }
  }
  return out;
}

namespace {

Mat evidence_impl(const HybridModel& model, const Trajectory& traj, bool with_controls) {
  model.check_trajectory(traj);
  const Eigen::Index T = traj.length();
  const int K = model.K;
  Mat ev(T, K);
  std::vector<Mat> lam, omega;
  for (int k = 0; k < K; ++k) {
    lam.push_back(model.dynamics[k].lam_cov);
    omega.push_back(model.init.omega_cov[k]);
  }
  const auto lam_d = densities(lam);
  const auto omega_d = densities(omega);
  for (int k = 0; k < K; ++k) {
    ev(0, k) = omega_d[k](traj.xs.col(0) - model.init.mu[k]);
    const auto& d = model.dynamics[k];
    Mat pred = d.A * traj.xs.leftCols(T - 1);
    if (model.du > 0) pred.noalias() += d.B * traj.us.leftCols(T - 1);
    pred.colwise() += d.c;
    for (Eigen::Index t = 1; t < T; ++t) {
      ev(t, k) = lam_d[k](traj.xs.col(t) - pred.col(t - 1));
    }
  }
  if (with_controls && model.mode == LoopMode::ClosedLoop) {
    std::vector<Mat> sig;
    for (int k = 0; k < K; ++k) sig.push_back(model.controllers[k].sigma_cov);
    const auto sig_d = densities(sig);
    Mat phis(model.controller_feature_dim(), T);
    for (Eigen::Index t = 0; t < T; ++t) {
      phis.col(t) = controller_features_at(traj.xs.col(t), traj.us, t, model.lag, model.poly_degree);
    }
    for (int k = 0; k < K; ++k) {
      Mat mean = model.controllers[k].gain * phis;
      mean.colwise() += model.controllers[k].offset;
      for (Eigen::Index t = 0; t < T; ++t) ev(t, k) += sig_d[k](traj.us.col(t) - mean.col(t));
    }
  }
  return ev;
}

}  // namespace

Mat log_local_evidence(const HybridModel& model, const Trajectory& traj) {
  return evidence_impl(model, traj, true);
}

Mat log_dynamics_evidence(const HybridModel& model, const Trajectory& traj) {
  return evidence_impl(model, traj, false);
}

std::vector<Mat> transition_matrices(const HybridModel& model, const Trajectory& traj) {
  model.check_trajectory(traj);
  std::vector<Mat> out;
  out.reserve(static_cast<std::size_t>(traj.length() - 1));
  if (model.transition.kind == LinkKind::Stationary) {
    const Mat psi = column_softmax(model.transition.bias);
    out.assign(static_cast<std::size_t>(traj.length() - 1), psi);
    return out;
  }
  for (Eigen::Index t = 0; t + 1 < traj.length(); ++t) {
    out.push_back(transition_matrix(model.transition, traj.xs.col(t), traj.us.col(t)));
  }
  return out;
}

bool identical(const Trajectory& a, const Trajectory& b) {
  return a.id == b.id && a.dt == b.dt && identical(a.xs, b.xs) && identical(a.us, b.us);
}

bool identical(const HybridModel& a, const HybridModel& b) {
  if (a.K != b.K || a.dx != b.dx || a.du != b.du || a.mode != b.mode || a.lag != b.lag ||
      a.poly_degree != b.poly_degree) {
    return false;
  }
  if (!identical(a.init.pi, b.init.pi) || a.init.mu.size() != b.init.mu.size() ||
      a.dynamics.size() != b.dynamics.size() || a.controllers.size() != b.controllers.size() ||
      a.init.omega_cov.size() != b.init.omega_cov.size()) {
    return false;
  }
  for (std::size_t k = 0; k < a.init.mu.size(); ++k) {
    if (!identical(a.init.mu[k], b.init.mu[k]) || !identical(a.init.omega_cov[k], b.init.omega_cov[k])) {
      return false;
    }
  }
  for (std::size_t k = 0; k < a.dynamics.size(); ++k) {
    const auto& p = a.dynamics[k];
    const auto& q = b.dynamics[k];
    if (!identical(p.A, q.A) || !identical(p.B, q.B) || !identical(p.c, q.c) ||
        !identical(p.lam_cov, q.lam_cov)) {
      return false;
    }
  }
  for (std::size_t k = 0; k < a.controllers.size(); ++k) {
    const auto& p = a.controllers[k];
    const auto& q = b.controllers[k];
    if (!identical(p.gain, q.gain) || !identical(p.offset, q.offset) ||
        !identical(p.sigma_cov, q.sigma_cov)) {
      return false;
    }
  }
  const auto& s = a.transition;
  const auto& t = b.transition;
  return s.kind == t.kind && s.K == t.K && s.dx == t.dx && s.du == t.du && s.degree == t.degree &&
         s.hidden_units == t.hidden_units && s.per_pair == t.per_pair && identical(s.bias, t.bias) &&
         identical(s.params, t.params) && identical(s.standardizer.mean, t.standardizer.mean) &&
         identical(s.standardizer.std, t.standardizer.std);
}

HybridModel permute_regimes(const HybridModel& model, const std::vector<int>& perm) {
  if (static_cast<int>(perm.size()) != model.K) {
    throw std::invalid_argument("permute_regimes: permutation has the wrong length");
  }
  HybridModel out = model;
  for (int r = 0; r < model.K; ++r) {
    const int src = perm[r];
    check_regime(src, model.K);
    out.init.pi[r] = model.init.pi[src];
    out.init.mu[r] = model.init.mu[src];
    out.init.omega_cov[r] = model.init.omega_cov[src];
    out.dynamics[r] = model.dynamics[src];
    if (!model.controllers.empty()) out.controllers[r] = model.controllers[src];
  }
  out.transition = model.transition.permuted(perm);
  return out;
}

}  // namespace hsid
