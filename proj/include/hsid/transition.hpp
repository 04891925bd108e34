#pragma once

#include "hsid/linalg.hpp"

#include <span>
#include <string>
#include <vector>

namespace hsid {

struct Dataset;

/// Lower bound applied to every transition probability.
inline constexpr double kMinTransitionProb = 1e-300;

enum class LinkKind { Stationary, Linear, Polynomial, Perceptron };

std::string to_string(LinkKind kind);

/// Per-dimension affine standardization of the link input [x; u].
struct Standardizer {
  Vec mean;
  Vec std;

  static Standardizer identity(int dim);
  /// Mean/std over every (x_t, u_t) of the dataset; std below 1e-8 maps to 1.
  static Standardizer fit(const Dataset& data);
  Vec apply(const Vec& x, const Vec& u) const;
};

/// State-action dependent logistic transition link.
///
/// Logit of moving j -> i at input (x, u) is bias(i, j) + g_i(s), with s the
/// standardized input. g is shared across the previous regime j unless
/// `per_pair` is set (Linear/Polynomial only), in which case every (i, j)
/// owns its own weight row.
///
/// Layout of `params`:
///   Linear / Polynomial, shared:   W (K x F) row-major
///   Linear / Polynomial, per_pair: W (K*K x F) row-major, row i*K + j
///   Perceptron(H):                 W1 (H x D), b1 (H), W2 (K x H), b2 (K)
struct TransitionModel {
  LinkKind kind = LinkKind::Stationary;
  int K = 1;
  int dx = 0;
  int du = 0;
  int degree = 1;
  int hidden_units = 0;
  bool per_pair = false;
  Mat bias;     // K x K, column j holds the logits out of regime j
  Vec params;   // feature weights, see layout above
  Standardizer standardizer;

  static TransitionModel stationary(int K, int dx, int du);
  static TransitionModel linear(int K, int dx, int du, bool per_pair = false);
  static TransitionModel polynomial(int K, int dx, int du, int degree, bool per_pair = false);
  static TransitionModel perceptron(int K, int dx, int du, int hidden_units);

  int input_dim() const { return dx + du; }
  /// Length of the feature vector fed to the linear output layer (Linear/Polynomial).
  int feature_dim() const;
  /// Expected length of `params` for this shape.
  int param_count() const;
  void validate() const;

  /// K x K matrix of logits; column j is the logit vector out of regime j.
  Mat logits(const Vec& x, const Vec& u) const;

  /// Flattened (bias row-major, params) vector, the coordinate system of
  /// weighted_nll_and_grad's gradient.
  Vec flat() const;
  void set_flat(const Vec& theta);

  /// Relabels regimes: new regime r is old regime perm[r].
  TransitionModel permuted(const std::vector<int>& perm) const;
};

/// psi(. | z_prev, x, u): softmax over the logits of column z_prev.
Vec transition_probs(const TransitionModel& tm, int z_prev, const Vec& x, const Vec& u);

/// Column-stochastic K x K matrix, entry (i, j) = p(z' = i | z = j, x, u).
Mat transition_matrix(const TransitionModel& tm, const Vec& x, const Vec& u);

/// Column-wise softmax of a logit matrix, with max subtraction.
Mat column_softmax(const Mat& logits);

struct NllGrad {
  double value = 0.0;
  Vec grad;  // over TransitionModel::flat()
};

/// -sum_n sum_t sum_{i,j} xi_t(j, i) ln psi_ij(x_t, u_t) and its exact gradient.
/// `xis[n][t]` is the K x K pairwise posterior of trajectory n between steps
/// t and t+1, indexed (j, i).
NllGrad weighted_nll_and_grad(const TransitionModel& tm, const Dataset& data,
                              std::span<const std::vector<Mat>> xis);

/// Pre-standardized transition inputs with their pairwise weights, for
/// repeated objective evaluation inside the M-step.
class TransitionBatch {
 public:
  TransitionBatch(const TransitionModel& shape, const Dataset& data,
                  std::span<const std::vector<Mat>> xis);

  /// Objective and gradient at the flattened parameter vector `theta`.
  NllGrad evaluate(const TransitionModel& shape, const Vec& theta, bool with_grad = true) const;
  /// Objective only.
  double value(const TransitionModel& shape, const Vec& theta) const;
  /// Total pairwise weight (number of transitions when xi slices sum to 1).
  double total_weight() const { return total_weight_; }
  /// Weighted transition counts sum_t xi_t(j, i), indexed (i, j).
  Mat counts() const;

 private:
  Mat inputs_;    // D x N standardized inputs
  Mat features_;  // F x N (Linear/Polynomial)
  Mat weights_;   // K*K x N, row i*K + j holds xi(j, i)
  double total_weight_ = 0.0;
};

}  // namespace hsid
