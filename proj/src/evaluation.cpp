#include "hsid/evaluation.hpp"

#include "hsid/inference.hpp"
#include "hsid/io.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

namespace hsid {
namespace {

int argmax(const Vec& v) {
  Eigen::Index i = 0;
  v.maxCoeff(&i);
  return static_cast<int>(i);
}

}  // namespace

std::string to_string(ForecastMode mode) {
  switch (mode) {
    case ForecastMode::Marginal: return "marginal";
    case ForecastMode::Argmax: return "argmax";
    case ForecastMode::Sample: return "sample";
  }
  return "?";
}

ForecastMode parse_forecast_mode(const std::string& name) {
  if (name == "marginal") return ForecastMode::Marginal;
  if (name == "argmax") return ForecastMode::Argmax;
  if (name == "sample") return ForecastMode::Sample;
  throw std::invalid_argument("unknown forecast mode '" + name + "' (expected marginal, argmax or sample)");
}

Vec filter_prefix(const HybridModel& model, const Trajectory& traj, Eigen::Index t) {
  model.check_trajectory(traj);
  if (t < 1 || t > traj.length()) throw std::out_of_range("filter_prefix: t must lie in [1, T]");
  Trajectory prefix;
  prefix.xs = traj.xs.leftCols(t);
  prefix.us = traj.us.leftCols(t);
  prefix.dt = traj.dt;
  const Mat ev = log_local_evidence(model, prefix);
  const auto trans = transition_matrices(model, prefix);
  return forward_pass(ev, trans, model.init.pi).alpha.row(t - 1).transpose();
}

Mat forecast_from(const HybridModel& model, const Vec& belief, const Vec& x0, const Mat& us,
                  ForecastMode mode, Rng* rng) {
  if (belief.size() != model.K) throw std::invalid_argument("forecast: belief must have K entries");
  if (x0.size() != model.dx || us.rows() != model.du) throw std::invalid_argument("forecast: dimension mismatch");
  if (mode == ForecastMode::Sample && rng == nullptr) throw std::invalid_argument("forecast: Sample mode needs an rng");
  const auto h = us.cols();
  Mat out(model.dx, h);
  Vec b = belief;
  Vec x = x0;
  const bool stationary = model.transition.kind == LinkKind::Stationary;
  Mat psi;
  if (stationary) psi = transition_matrix(model.transition, x, Vec::Zero(model.du));
  for (Eigen::Index k = 0; k < h; ++k) {
    const Vec u = us.col(k);
    if (!stationary) psi = transition_matrix(model.transition, x, u);
    b = psi * b;
    b /= b.sum();
    Vec next;
    switch (mode) {
      case ForecastMode::Marginal:
        next = Vec::Zero(model.dx);
        for (int i = 0; i < model.K; ++i) {
          if (b[i] > 0.0) next += b[i] * predict_state(model, i, x, u);
        }
        break;
      case ForecastMode::Argmax:
        next = predict_state(model, argmax(b), x, u);
        break;
      case ForecastMode::Sample: {
        const int z = rng->categorical(b);
        next = step_dynamics(model, z, x, u, *rng);
        b.setZero();
        b[z] = 1.0;
        break;
      }
    }
    out.col(k) = next;
    x = std::move(next);
  }
  return out;
}

Mat forecast(const HybridModel& model, const Trajectory& traj, Eigen::Index t, int h, ForecastMode mode,
             Rng* rng) {
  if (t < 0 || h < 1 || t + h > traj.length() - 1) {
    throw std::out_of_range("forecast: horizon " + std::to_string(h) + " from step " + std::to_string(t) +
                            " overruns a trajectory of length " + std::to_string(traj.length()));
  }
  const Vec b = filter_prefix(model, traj, t + 1);
  return forecast_from(model, b, traj.xs.col(t), traj.us.middleCols(t, h), mode, rng);
}

double nmse(const Mat& preds, const Mat& truths, const Vec& variance) {
  if (preds.cols() == 0) throw std::invalid_argument("nmse: no evaluation points");
  if (preds.rows() != truths.rows() || preds.cols() != truths.cols() || variance.size() != preds.rows()) {
    throw std::invalid_argument("nmse: shape mismatch");
  }
  if (!(variance.array() > 0.0).all()) throw std::invalid_argument("nmse: zero-variance dimension");
  const Mat scaled = variance.cwiseInverse().asDiagonal() * (preds - truths).cwiseAbs2();
  return scaled.sum() / static_cast<double>(preds.cols()) / static_cast<double>(preds.rows());
}

Vec state_variance(const Dataset& data) {
  const auto n = static_cast<double>(data.steps());
  if (n < 1) throw std::invalid_argument("state_variance: empty dataset");
  Vec mean = Vec::Zero(data.dx);
  for (const auto& tr : data.trajectories) mean += tr.xs.rowwise().sum();
  mean /= n;
  Vec var = Vec::Zero(data.dx);
  for (const auto& tr : data.trajectories) var += (tr.xs.colwise() - mean).cwiseAbs2().rowwise().sum();
  return var / n;
}

std::vector<double> horizon_nmse(const HybridModel& model, const Dataset& test, const std::vector<int>& horizons,
                                 const Vec& variance, ForecastMode mode, Rng* rng) {
  if (horizons.empty()) throw std::invalid_argument("horizon_nmse: no horizons");
  int max_h = 0;
  for (int h : horizons) {
    if (h < 1) throw std::invalid_argument("horizon_nmse: horizons must be >= 1");
    max_h = std::max(max_h, h);
  }
  if (variance.size() != model.dx || !(variance.array() > 0.0).all()) {
    throw std::invalid_argument("horizon_nmse: zero-variance dimension or size mismatch");
  }
  const Vec inv_var = variance.cwiseInverse();
  std::vector<double> sums(horizons.size(), 0.0);
  std::vector<double> counts(horizons.size(), 0.0);
  for (const auto& tr : test.trajectories) {
    model.check_trajectory(tr);
    const Mat ev = log_local_evidence(model, tr);
    const auto trans = transition_matrices(model, tr);
    const Mat alpha = forward_pass(ev, trans, model.init.pi).alpha;
    const auto T = tr.length();
    for (Eigen::Index s = 0; s + 1 < T; ++s) {
      const auto reach = std::min<Eigen::Index>(max_h, T - 1 - s);
      const Mat preds = forecast_from(model, alpha.row(s).transpose(), tr.xs.col(s), tr.us.middleCols(s, reach),
                                      mode, rng);
      for (std::size_t k = 0; k < horizons.size(); ++k) {
        const int h = horizons[k];
        if (h > reach) continue;
        sums[k] += (preds.col(h - 1) - tr.xs.col(s + h)).cwiseAbs2().dot(inv_var);
        counts[k] += 1.0;
      }
    }
  }
  std::vector<double> out(horizons.size());
  for (std::size_t k = 0; k < horizons.size(); ++k) {
    if (counts[k] == 0.0) {
      throw std::invalid_argument("horizon_nmse: no evaluation points for h = " + std::to_string(horizons[k]));
    }
    out[k] = sums[k] / counts[k] / static_cast<double>(model.dx);
  }
  return out;
}

long count_params(const HybridModel& model) {
  model.validate();
  const long K = model.K;
  const long dx = model.dx;
  const long du = model.du;
  long n = K + K * K + static_cast<long>(model.transition.params.size());
  n += K * (dx * dx + dx * du + dx + dx);
  if (model.mode == LoopMode::ClosedLoop) {
    n += K * (du * model.controller_feature_dim() + du + du);
  }
  return n;
}

EvalReport evaluate(const std::vector<ModelGroup>& groups, const Dataset& test, const EvalOptions& options) {
  if (groups.empty()) throw std::invalid_argument("evaluate: no models");
  if (test.size() == 0) throw std::invalid_argument("evaluate: empty evaluation set");
  const Vec variance = state_variance(test);
  Rng rng(options.seed);
  EvalReport report;
  for (const auto& g : groups) {
    if (g.split_models.empty()) throw std::invalid_argument("evaluate: group '" + g.tag + "' has no models");
    std::vector<std::vector<double>> per_split;
    for (const auto& m : g.split_models) {
      per_split.push_back(horizon_nmse(m, test, options.horizons, variance, options.mode, &rng));
    }
    const auto n = static_cast<double>(per_split.size());
    for (std::size_t k = 0; k < options.horizons.size(); ++k) {
      EvalRow row;
      row.model_tag = g.tag;
      row.K = g.split_models.front().K;
      row.h = options.horizons[k];
      row.n_splits = static_cast<int>(per_split.size());
      double mean = 0.0;
      for (const auto& s : per_split) {
        row.per_split.push_back(s[k]);
        mean += s[k];
      }
      mean /= n;
      double var = 0.0;
      for (double v : row.per_split) var += (v - mean) * (v - mean);
      row.nmse_mean = mean;
      row.nmse_std = std::sqrt(var / n);
      report.rows.push_back(std::move(row));
    }
    report.param_counts.push_back(ParamRow{g.tag, g.split_models.front().K, count_params(g.split_models.front())});
  }
  return report;
}

namespace {

// CSV cells for values that may have diverged.
std::string cell(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return format_double(v);
}

Json json_number(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

}  // namespace

void EvalReport::write_csv(std::ostream& os) const {
  os << "model_tag,K,h,nmse_mean,nmse_std,n_splits\n";
  for (const auto& r : rows) {
    os << r.model_tag << ',' << r.K << ',' << r.h << ',' << cell(r.nmse_mean) << ',' << cell(r.nmse_std) << ','
       << r.n_splits << '\n';
  }
}

void EvalReport::write_long_csv(std::ostream& os) const {
  os << "model_tag,K,h,split,nmse\n";
  for (const auto& r : rows) {
    for (std::size_t s = 0; s < r.per_split.size(); ++s) {
      os << r.model_tag << ',' << r.K << ',' << r.h << ',' << s << ',' << cell(r.per_split[s]) << '\n';
    }
  }
}

std::string EvalReport::to_json() const {
  Json j;
  Json rs = Json::array();
  for (const auto& r : rows) {
    rs.push_back(Json{{"model_tag", r.model_tag},
                      {"K", r.K},
                      {"h", r.h},
                      {"nmse_mean", json_number(r.nmse_mean)},
                      {"nmse_std", json_number(r.nmse_std)},
                      {"n_splits", r.n_splits}});
  }
  j["rows"] = std::move(rs);
  Json ps = Json::array();
  for (const auto& p : param_counts) ps.push_back(Json{{"model_tag", p.model_tag}, {"K", p.K}, {"params", p.params}});
  j["param_counts"] = std::move(ps);
  j["param_convention"] =
      "pi (K) + transition bias (K^2) + link weights + per regime A, B, c, diag(Lambda)"
      " [+ gain, offset, diag(Sigma) in closed loop]; initial-state Gaussians excluded";
  return dump_json(j) + "\n";
}

}  // namespace hsid
