#pragma once

#include "hsid/model.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace hsid {

enum class ForecastMode { Marginal, Argmax, Sample };
std::string to_string(ForecastMode mode);
ForecastMode parse_forecast_mode(const std::string& name);

/// Filtered regime belief p(z | steps 0..t-1) from the first `t` steps,
/// 1 <= t <= T.
Vec filter_prefix(const HybridModel& model, const Trajectory& traj, Eigen::Index t);

/// Open-loop h-step forecast from the belief `belief` over the regime of the
/// last observed state `x`, driven by the recorded controls `us` (du x h,
/// column k applied at predicted step k). Returns dx x h predictions.
Mat forecast_from(const HybridModel& model, const Vec& belief, const Vec& x, const Mat& us,
                  ForecastMode mode, Rng* rng = nullptr);

/// Forecast of x_{t+1} .. x_{t+h} (0-based columns) after filtering on
/// steps 0..t. Requires t + h <= T - 1. Sample mode needs `rng`.
Mat forecast(const HybridModel& model, const Trajectory& traj, Eigen::Index t, int h,
             ForecastMode mode, Rng* rng = nullptr);

/// Mean over evaluation points (columns) of sum_d (pred - truth)^2 / var_d,
/// divided by the state dimension.
double nmse(const Mat& preds, const Mat& truths, const Vec& variance);

/// Per-dimension (population) variance of every state in a dataset.
Vec state_variance(const Dataset& data);

/// NMSE per horizon of one model, scoring the final step of every window
/// over all valid start steps of all test trajectories.
std::vector<double> horizon_nmse(const HybridModel& model, const Dataset& test,
                                 const std::vector<int>& horizons, const Vec& variance,
                                 ForecastMode mode = ForecastMode::Marginal, Rng* rng = nullptr);

/// Parameter count: pi (K), transition bias (K^2) and link weights, and per
/// regime A, B, c and diagonal Lambda (plus gain, offset and diagonal Sigma
/// for closed-loop models). Initial-state Gaussians are not counted.
long count_params(const HybridModel& model);

struct ModelGroup {
  std::string tag;
  std::vector<HybridModel> split_models;
};

struct EvalOptions {
  std::vector<int> horizons{1, 20, 40, 60, 80};
  ForecastMode mode = ForecastMode::Marginal;
  std::uint64_t seed = 0;  // Sample mode only
};

struct EvalRow {
  std::string model_tag;
  int K = 0;
  int h = 0;
  double nmse_mean = 0.0;
  double nmse_std = 0.0;  // population standard deviation over splits
  int n_splits = 0;
  std::vector<double> per_split;
};

struct ParamRow {
  std::string model_tag;
  int K = 0;
  long params = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<ParamRow> param_counts;

  /// model_tag,K,h,nmse_mean,nmse_std,n_splits
  void write_csv(std::ostream& os) const;
  /// model_tag,K,h,split,nmse (one row per split)
  void write_long_csv(std::ostream& os) const;
  /// Structured summary with the rows and the parameter-count table.
  std::string to_json() const;
};

/// Scores every split model of every group on the test set.
EvalReport evaluate(const std::vector<ModelGroup>& groups, const Dataset& test, const EvalOptions& options);

}  // namespace hsid
