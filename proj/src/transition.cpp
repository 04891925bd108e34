#include "hsid/transition.hpp"

#include "hsid/features.hpp"
#include "hsid/model.hpp"

#include <cmath>
#include <stdexcept>

namespace hsid {
namespace {

using RowMajorMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMajorMat>;
using RowMap = Eigen::Map<RowMajorMat>;

struct PerceptronView {
  ConstRowMap w1;
  Eigen::Map<const Vec> b1;
  ConstRowMap w2;
  Eigen::Map<const Vec> b2;
};

PerceptronView perceptron_view(const TransitionModel& tm, const double* p) {
  const int H = tm.hidden_units;
  const int D = tm.input_dim();
  const int K = tm.K;
  return PerceptronView{ConstRowMap(p, H, D), Eigen::Map<const Vec>(p + H * D, H),
                        ConstRowMap(p + H * D + H, K, H),
                        Eigen::Map<const Vec>(p + H * D + H + K * H, K)};
}

int weight_rows(const TransitionModel& tm) { return tm.per_pair ? tm.K * tm.K : tm.K; }

Vec link_features(const TransitionModel& tm, const Vec& s) {
  return tm.kind == LinkKind::Polynomial ? monomials(s, tm.degree) : s;
}

}  // namespace

std::string to_string(LinkKind kind) {
  switch (kind) {
    case LinkKind::Stationary: return "stationary";
    case LinkKind::Linear: return "linear";
    case LinkKind::Polynomial: return "polynomial";
    case LinkKind::Perceptron: return "perceptron";
  }
  return "unknown";
}

Standardizer Standardizer::identity(int dim) {
  return Standardizer{Vec::Zero(dim), Vec::Ones(dim)};
}

Standardizer Standardizer::fit(const Dataset& data) {
  const int D = data.dx + data.du;
  Vec sum = Vec::Zero(D);
  Vec sq = Vec::Zero(D);
  double n = 0.0;
  Vec row(D);
  for (const auto& tr : data.trajectories) {
    for (Eigen::Index t = 0; t < tr.length(); ++t) {
      row.head(data.dx) = tr.xs.col(t);
      row.tail(data.du) = tr.us.col(t);
      sum += row;
      n += 1.0;
    }
  }
  const Vec mean = sum / n;
  for (const auto& tr : data.trajectories) {
    for (Eigen::Index t = 0; t < tr.length(); ++t) {
      row.head(data.dx) = tr.xs.col(t);
      row.tail(data.du) = tr.us.col(t);
      sq += (row - mean).cwiseAbs2();
    }
  }
  Vec sd = (sq / n).cwiseSqrt();
  for (Eigen::Index i = 0; i < sd.size(); ++i) {
    if (!(sd[i] > 1e-8)) sd[i] = 1.0;
  }
  return Standardizer{mean, sd};
}

Vec Standardizer::apply(const Vec& x, const Vec& u) const {
  Vec s(x.size() + u.size());
  s.head(x.size()) = x;
  s.tail(u.size()) = u;
  return (s - mean).cwiseQuotient(std);
}

TransitionModel TransitionModel::stationary(int K, int dx, int du) {
  TransitionModel tm;
  tm.kind = LinkKind::Stationary;
  tm.K = K;
  tm.dx = dx;
  tm.du = du;
  tm.bias = Mat::Zero(K, K);
  tm.params = Vec();
  tm.standardizer = Standardizer::identity(dx + du);
  return tm;
}

TransitionModel TransitionModel::linear(int K, int dx, int du, bool per_pair) {
  TransitionModel tm = stationary(K, dx, du);
  tm.kind = LinkKind::Linear;
  tm.per_pair = per_pair;
  tm.params = Vec::Zero(tm.param_count());
  return tm;
}

TransitionModel TransitionModel::polynomial(int K, int dx, int du, int degree, bool per_pair) {
  TransitionModel tm = stationary(K, dx, du);
  tm.kind = LinkKind::Polynomial;
  tm.degree = degree;
  tm.per_pair = per_pair;
  tm.params = Vec::Zero(tm.param_count());
  return tm;
}

TransitionModel TransitionModel::perceptron(int K, int dx, int du, int hidden_units) {
  TransitionModel tm = stationary(K, dx, du);
  tm.kind = LinkKind::Perceptron;
  tm.hidden_units = hidden_units;
  tm.params = Vec::Zero(tm.param_count());
  return tm;
}

int TransitionModel::feature_dim() const {
  switch (kind) {
    case LinkKind::Linear: return input_dim();
    case LinkKind::Polynomial: return monomial_count(input_dim(), degree);
    default: return 0;
  }
}

int TransitionModel::param_count() const {
  switch (kind) {
    case LinkKind::Stationary: return 0;
    case LinkKind::Linear:
    case LinkKind::Polynomial: return weight_rows(*this) * feature_dim();
    case LinkKind::Perceptron: {
      const int H = hidden_units;
      return H * input_dim() + H + K * H + K;
    }
  }
  return 0;
}

void TransitionModel::validate() const {
  if (K < 1) throw std::invalid_argument("transition: K must be >= 1");
  if (bias.rows() != K || bias.cols() != K) {
    throw std::invalid_argument("transition: bias must be K x K");
  }
  if (kind == LinkKind::Polynomial && degree < 1) {
    throw std::invalid_argument("transition: polynomial degree must be >= 1");
  }
  if (kind == LinkKind::Perceptron && hidden_units < 1) {
    throw std::invalid_argument("transition: perceptron needs hidden_units >= 1");
  }
  if (per_pair && kind != LinkKind::Linear && kind != LinkKind::Polynomial) {
    throw std::invalid_argument("transition: per_pair weights exist only for linear/polynomial links");
  }
  if (params.size() != param_count()) {
    throw std::invalid_argument("transition: expected " + std::to_string(param_count()) +
                                " feature parameters, got " + std::to_string(params.size()));
  }
  if (standardizer.mean.size() != input_dim() || standardizer.std.size() != input_dim()) {
    throw std::invalid_argument("transition: standardizer dimension mismatch");
  }
  if (!(standardizer.std.array() > 0.0).all()) {
    throw std::invalid_argument("transition: standardizer std must be positive");
  }
  if (!bias.allFinite() || !params.allFinite()) {
    throw std::invalid_argument("transition: non-finite parameters");
  }
}

Mat TransitionModel::logits(const Vec& x, const Vec& u) const {
  if (kind == LinkKind::Stationary) return bias;
  const Vec s = standardizer.apply(x, u);
  Mat out = bias;
  if (kind == LinkKind::Perceptron) {
    const auto v = perceptron_view(*this, params.data());
    const Vec h = (v.w1 * s + v.b1).array().tanh().matrix();
    const Vec g = v.w2 * h + v.b2;
    out.colwise() += g;
    return out;
  }
  const Vec f = link_features(*this, s);
  const ConstRowMap w(params.data(), weight_rows(*this), f.size());
  const Vec g = w * f;
  if (per_pair) {
    for (int i = 0; i < K; ++i) {
      for (int j = 0; j < K; ++j) out(i, j) += g[i * K + j];
    }
  } else {
    out.colwise() += g;
  }
  return out;
}

Vec TransitionModel::flat() const {
  Vec theta(K * K + params.size());
  RowMap(theta.data(), K, K) = bias;
  theta.tail(params.size()) = params;
  return theta;
}

void TransitionModel::set_flat(const Vec& theta) {
  if (theta.size() != K * K + param_count()) {
    throw std::invalid_argument("transition: flat parameter vector has the wrong length");
  }
  bias = ConstRowMap(theta.data(), K, K);
  params = theta.tail(param_count());
}

TransitionModel TransitionModel::permuted(const std::vector<int>& perm) const {
  if (static_cast<int>(perm.size()) != K) {
    throw std::invalid_argument("transition: permutation has the wrong length");
  }
  TransitionModel out = *this;
  for (int i = 0; i < K; ++i) {
    for (int j = 0; j < K; ++j) out.bias(i, j) = bias(perm[i], perm[j]);
  }
  if (kind == LinkKind::Linear || kind == LinkKind::Polynomial) {
    const int F = feature_dim();
    const ConstRowMap w(params.data(), weight_rows(*this), F);
    RowMap wo(out.params.data(), weight_rows(*this), F);
    for (int i = 0; i < K; ++i) {
      if (per_pair) {
        for (int j = 0; j < K; ++j) wo.row(i * K + j) = w.row(perm[i] * K + perm[j]);
      } else {
        wo.row(i) = w.row(perm[i]);
      }
    }
  } else if (kind == LinkKind::Perceptron) {
    const int H = hidden_units;
    const int D = input_dim();
    const double* p = params.data();
    double* q = out.params.data();
    const ConstRowMap w2(p + H * D + H, K, H);
    RowMap w2o(q + H * D + H, K, H);
    for (int i = 0; i < K; ++i) {
      w2o.row(i) = w2.row(perm[i]);
      q[H * D + H + K * H + i] = p[H * D + H + K * H + perm[i]];
    }
  }
  return out;
}

Mat column_softmax(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double hi = logits.col(j).maxCoeff();
    out.col(j) = (logits.col(j).array() - hi).exp().matrix();
    out.col(j) /= out.col(j).sum();
  }
  // Strictly positive entries keep every forward normalizer away from zero.
  out = out.cwiseMax(kMinTransitionProb);
  return out;
}

Vec transition_probs(const TransitionModel& tm, int z_prev, const Vec& x, const Vec& u) {
  if (z_prev < 0 || z_prev >= tm.K) {
    throw std::out_of_range("transition_probs: regime index out of range");
  }
  if (!x.allFinite() || !u.allFinite()) {
    throw std::invalid_argument("transition_probs: non-finite input");
  }
  const Vec l = tm.logits(x, u).col(z_prev);
  Vec p = (l.array() - l.maxCoeff()).exp().matrix();
  p /= p.sum();
  return p.cwiseMax(kMinTransitionProb);
}

Mat transition_matrix(const TransitionModel& tm, const Vec& x, const Vec& u) {
  if (!x.allFinite() || !u.allFinite()) {
    throw std::invalid_argument("transition_matrix: non-finite input");
  }
  return column_softmax(tm.logits(x, u));
}

TransitionBatch::TransitionBatch(const TransitionModel& shape, const Dataset& data,
                                 std::span<const std::vector<Mat>> xis) {
  if (xis.size() != data.trajectories.size()) {
    throw std::invalid_argument("TransitionBatch: one xi sequence per trajectory required");
  }
  const int K = shape.K;
  Eigen::Index n_total = 0;
  for (std::size_t n = 0; n < xis.size(); ++n) {
    const auto T = data.trajectories[n].length();
    if (static_cast<Eigen::Index>(xis[n].size()) != T - 1) {
      throw std::invalid_argument("TransitionBatch: trajectory " + std::to_string(n) +
                                  " needs T-1 pairwise slices");
    }
    n_total += T - 1;
  }
  inputs_.resize(shape.input_dim(), n_total);
  weights_.resize(K * K, n_total);
  Eigen::Index col = 0;
  for (std::size_t n = 0; n < xis.size(); ++n) {
    const auto& tr = data.trajectories[n];
    for (Eigen::Index t = 0; t + 1 < tr.length(); ++t, ++col) {
      const Mat& xi = xis[n][static_cast<std::size_t>(t)];
      if (xi.rows() != K || xi.cols() != K) {
        throw std::invalid_argument("TransitionBatch: xi slice must be K x K");
      }
      inputs_.col(col) = shape.standardizer.apply(tr.xs.col(t), tr.us.col(t));
      for (int i = 0; i < K; ++i) {
        for (int j = 0; j < K; ++j) weights_(i * K + j, col) = xi(j, i);
      }
    }
  }
  total_weight_ = weights_.sum();
  if (shape.kind == LinkKind::Linear) {
    features_ = inputs_;
  } else if (shape.kind == LinkKind::Polynomial) {
    features_.resize(shape.feature_dim(), n_total);
    for (Eigen::Index c = 0; c < n_total; ++c) {
      features_.col(c) = monomials(inputs_.col(c), shape.degree);
    }
  }
}

Mat TransitionBatch::counts() const {
  const auto K = static_cast<Eigen::Index>(std::lround(std::sqrt(static_cast<double>(weights_.rows()))));
  const Vec sums = weights_.rowwise().sum();
  Mat out(K, K);
  for (Eigen::Index i = 0; i < K; ++i) {
    for (Eigen::Index j = 0; j < K; ++j) out(i, j) = sums[i * K + j];
  }
  return out;
}

double TransitionBatch::value(const TransitionModel& shape, const Vec& theta) const {
  return evaluate(shape, theta, false).value;
}

NllGrad TransitionBatch::evaluate(const TransitionModel& shape, const Vec& theta,
                                  bool with_grad) const {
  const int K = shape.K;
  const Eigen::Index N = inputs_.cols();
  const ConstRowMap bias(theta.data(), K, K);
  const double* p = theta.data() + K * K;

  // Feature contribution to the logits: K x N (shared) or K*K x N (per pair).
  Mat G;
  Mat hidden;
  switch (shape.kind) {
    case LinkKind::Stationary: break;
    case LinkKind::Linear:
    case LinkKind::Polynomial:
      G = ConstRowMap(p, weight_rows(shape), features_.rows()) * features_;
      break;
    case LinkKind::Perceptron: {
      const auto v = perceptron_view(shape, p);
      hidden = ((v.w1 * inputs_).colwise() + v.b1).array().tanh().matrix();
      G = (v.w2 * hidden).colwise() + v.b2;
      break;
    }
  }

  NllGrad out;
  Mat d_bias = Mat::Zero(K, K);
  Mat dG;
  if (with_grad && G.size() > 0) dG = Mat::Zero(G.rows(), G.cols());

  Vec l(K);
  for (Eigen::Index n = 0; n < N; ++n) {
    for (int j = 0; j < K; ++j) {
      double w_col = 0.0;
      for (int i = 0; i < K; ++i) w_col += weights_(i * K + j, n);
      if (w_col == 0.0) continue;
      for (int i = 0; i < K; ++i) {
        double g = 0.0;
        if (G.size() > 0) g = shape.per_pair ? G(i * K + j, n) : G(i, n);
        l[i] = bias(i, j) + g;
      }
      const double hi = l.maxCoeff();
      double z = 0.0;
      for (int i = 0; i < K; ++i) z += std::exp(l[i] - hi);
      const double lse = hi + std::log(z);
      for (int i = 0; i < K; ++i) {
        const double w = weights_(i * K + j, n);
        if (w != 0.0) out.value -= w * (l[i] - lse);
        if (with_grad) {
          const double d = w_col * std::exp(l[i] - lse) - w;
          d_bias(i, j) += d;
          if (dG.size() > 0) {
            if (shape.per_pair) {
              dG(i * K + j, n) += d;
            } else {
              dG(i, n) += d;
            }
          }
        }
      }
    }
  }
  if (!with_grad) return out;

  out.grad = Vec::Zero(theta.size());
  RowMap(out.grad.data(), K, K) = d_bias;
  double* gp = out.grad.data() + K * K;
  switch (shape.kind) {
    case LinkKind::Stationary: break;
    case LinkKind::Linear:
    case LinkKind::Polynomial:
      RowMap(gp, weight_rows(shape), features_.rows()) = dG * features_.transpose();
      break;
    case LinkKind::Perceptron: {
      const auto v = perceptron_view(shape, p);
      const int H = shape.hidden_units;
      const int D = shape.input_dim();
      const Mat d_hidden = v.w2.transpose() * dG;
      const Mat d_pre = d_hidden.cwiseProduct((1.0 - hidden.array().square()).matrix());
      RowMap(gp, H, D) = d_pre * inputs_.transpose();
      Eigen::Map<Vec>(gp + H * D, H) = d_pre.rowwise().sum();
      RowMap(gp + H * D + H, K, H) = dG * hidden.transpose();
      Eigen::Map<Vec>(gp + H * D + H + K * H, K) = dG.rowwise().sum();
      break;
    }
  }
  return out;
}

NllGrad weighted_nll_and_grad(const TransitionModel& tm, const Dataset& data,
                              std::span<const std::vector<Mat>> xis) {
  tm.validate();
  const TransitionBatch batch(tm, data, xis);
  return batch.evaluate(tm, tm.flat());
}

}  // namespace hsid
