// hsid: data generation, fitting, evaluation, distillation and rollouts for
// switching linear systems with state-dependent regime transitions.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include "hsid/envs.hpp"
#include "hsid/evaluation.hpp"
#include "hsid/io.hpp"
#include "hsid/learning.hpp"
#include "hsid/policy.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace hsid;

namespace {

// Raised for bad flag values or combinations; maps to exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string two_digits(int i) {
  std::string s = std::to_string(i);
  return s.size() < 2 ? "0" + s : s;
}

std::string three_digits(int i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

// Canonical key=value view of every option of a subcommand, for the config hash.
Provenance provenance_of(const CLI::App& sub, std::uint64_t seed) {
  std::map<std::string, std::string> entries;
  entries["command"] = sub.get_name();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_name();
    if (name.empty() || name == "--help" || name == "-h") continue;
    // Output destinations do not change results.
    if (name == "--out" || name == "--out-dir" || name == "--history" || name == "--long-out" ||
        name == "--json-out") {
      continue;
    }
    std::string value;
    if (opt->count() > 0) {
      for (const auto& r : opt->results()) value += r + ";";
    } else {
      value = opt->get_default_str();
    }
    entries[name] = value;
  }
  Provenance p;
  p.seed = seed;
  p.config_hash = config_hash(entries);
  return p;
}

void require_file(const std::string& path, const std::string& flag) {
  if (!fs::is_regular_file(path)) throw UsageError(flag + ": file not found: " + path);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw UsageError("cannot create output directory " + dir.string());
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) ensure_dir(parent);
}

// --- simulate -----------------------------------------------------------------

struct SimulateArgs {
  std::string env = "pendulum";
  std::string obs = "joint";
  std::string out_dir;
  std::string policy = "explore";
  int n_train = 25;
  int n_test = 5;
  int n_splits = 24;
  int split_size = 10;
  int steps = 0;  // 0: environment default
  int hold = 1;
  double expert_noise = 0.0;
  std::optional<double> dt, restitution, damping, torque_limit, force_limit;
};

int run_simulate(const SimulateArgs& a, const CLI::App& sub, std::uint64_t seed) {
  EnvConfig env;
  ProtocolOptions po;
  try {
    env = EnvConfig::defaults(parse_env_kind(a.env), parse_obs_kind(a.obs));
    if (a.steps > 0) env.horizon = a.steps;
    if (a.dt) env.dt = *a.dt;
    if (a.restitution) env.restitution = *a.restitution;
    if (a.damping) env.damping = *a.damping;
    if (a.torque_limit) env.torque_limit = *a.torque_limit;
    if (a.force_limit) env.force_limit = *a.force_limit;
    env.seed = seed;
    env.validate();
    if (a.policy != "explore" && a.policy != "expert") throw UsageError("--policy must be explore or expert");
    po.n_train = a.n_train;
    po.n_test = a.n_test;
    po.n_splits = a.n_splits;
    po.split_size = a.split_size;
    po.hold = a.hold;
    po.expert = a.policy == "expert";
    po.expert_noise = a.expert_noise;
    if (po.n_train < 1 || po.n_test < 0 || po.n_splits < 0 || po.hold < 1 || po.expert_noise < 0.0) {
      throw UsageError("counts must be nonnegative (n-train and hold at least 1)");
    }
    if (po.n_splits > 0 && (po.split_size < 1 || po.split_size > po.n_train)) {
      throw UsageError("--split-size must lie in [1, n-train]");
    }
    if (po.expert && env.env == EnvKind::BouncingBall) throw UsageError("the ball has no expert");
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const fs::path dir(a.out_dir);
  ensure_dir(dir);

  const Protocol p = generate_protocol(env, po);
  const Provenance prov = provenance_of(sub, seed);
  const std::string prov_line = dump_json(Json{{"provenance", prov.to_json()}}, -1) + "\n";

  std::ostringstream train;
  train << prov_line;
  write_dataset(train, p.train);
  write_file(dir / "train.ndjson", train.str());
  if (po.n_test > 0) {
    std::ostringstream test;
    test << prov_line;
    write_dataset(test, p.test);
    write_file(dir / "test.ndjson", test.str());
  }
  Manifest m;
  for (const auto& t : p.train.trajectories) m.train.push_back(t.id);
  if (po.n_test > 0) {
    for (const auto& t : p.test.trajectories) m.test.push_back(t.id);
  }
  for (const auto& s : p.splits) {
    std::vector<std::string> ids;
    for (int i : s) ids.push_back(p.train.trajectories[static_cast<std::size_t>(i)].id);
    m.splits.push_back(std::move(ids));
  }
  save_manifest(dir / "manifest.json", m, &prov);
  std::cout << "wrote " << p.train.size() << " training and " << (po.n_test > 0 ? p.test.size() : 0)
            << " test trajectories (" << env.horizon << " steps each), " << p.splits.size() << " splits to "
            << dir.string() << "\n";
  return 0;
}

// --- fit / distill ------------------------------------------------------------

struct FitArgs {
  std::string data;
  std::string manifest;
  int split = -1;
  std::string out;
  std::string history;
  std::string init_model;
  std::string transition = "stationary";
  std::string mode = "open";
  bool per_pair = false;
  bool zero_offset = false;
  bool record_time = false;
  FitConfig config;
};

void parse_transition(const std::string& text, FitConfig& c) {
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
  auto number = [&](int fallback) {
    if (arg.empty()) return fallback;
    try {
      std::size_t used = 0;
      const int v = std::stoi(arg, &used);
      if (used != arg.size() || v < 1) throw std::invalid_argument(arg);
      return v;
    } catch (const std::exception&) {
      throw UsageError("--transition: bad size in '" + text + "'");
    }
  };
  if (kind == "stationary" && arg.empty()) {
    c.transition_kind = LinkKind::Stationary;
  } else if (kind == "linear" && arg.empty()) {
    c.transition_kind = LinkKind::Linear;
  } else if (kind == "poly" || kind == "polynomial") {
    c.transition_kind = LinkKind::Polynomial;
    c.transition_degree = number(2);
  } else if (kind == "perceptron" || kind == "mlp") {
    c.transition_kind = LinkKind::Perceptron;
    c.hidden_units = number(16);
  } else {
    throw UsageError("--transition: expected stationary, linear, poly[:degree] or perceptron[:units], got '" + text +
                     "'");
  }
}

void add_fit_options(CLI::App* sub, FitArgs& a) {
  sub->add_option("--out,-o", a.out, "Model file, or output directory when fitting splits")->required();
  sub->add_option("--manifest", a.manifest, "Split manifest; fits one model per split");
  sub->add_option("--split", a.split, "Fit only this split index (with --manifest)");
  sub->add_option("--history", a.history, "FitHistory CSV (single fit)");
  sub->add_option("--init-model", a.init_model, "Start EM from this model instead of restarts");
  sub->add_option("--K,-K", a.config.K, "Number of regimes");
  sub->add_option("--transition", a.transition, "stationary | linear | poly:D | perceptron:H");
  sub->add_flag("--per-pair", a.per_pair, "Separate link weights per regime pair (linear/poly)");
  sub->add_option("--lag", a.config.lag, "Past controls in the controller features");
  sub->add_option("--degree", a.config.poly_degree, "State monomial degree of the controller features");
  sub->add_flag("--zero-offset", a.zero_offset, "Constrain controller offsets to zero");
  sub->add_option("--max-iters", a.config.max_iters, "EM iterations per restart");
  sub->add_option("--tol", a.config.rel_tol, "Relative log-likelihood improvement threshold");
  sub->add_option("--restarts", a.config.restarts, "Independent EM restarts");
  sub->add_option("--floor", a.config.covariance_floor, "Covariance eigenvalue floor");
  sub->add_option("--ridge", a.config.ridge, "Ridge on the regression normal equations");
  sub->add_option("--glm-steps", a.config.glm_steps, "L-BFGS iterations per transition M-step");
  sub->add_option("--kmeans-iters", a.config.kmeans_iters, "k-means iterations of the initializer");
  sub->add_flag("--record-time", a.record_time, "Write wall time into the history CSV (otherwise 0)");
}

void write_history(const fs::path& path, const FitHistory& h, const Provenance& prov, bool with_time) {
  std::ostringstream os;
  prov.write_csv_header(os);
  h.write_csv(os, with_time);
  write_file(path, os.str());
}

int run_fit(FitArgs& a, const CLI::App& sub, std::uint64_t seed, bool closed_default) {
  FitConfig& c = a.config;
  c.seed = seed;
  c.per_pair = a.per_pair;
  c.zero_offset = a.zero_offset;
  std::optional<HybridModel> init;
  Dataset data;
  Manifest manifest;
  try {
    parse_transition(a.transition, c);
    if (a.mode == "open") {
      c.mode = LoopMode::OpenLoop;
    } else if (a.mode == "closed") {
      c.mode = LoopMode::ClosedLoop;
    } else {
      throw UsageError("--mode must be open or closed");
    }
    if (closed_default && c.mode != LoopMode::ClosedLoop) throw UsageError("distill fits closed-loop models only");
    c.validate();
    require_file(a.data, closed_default ? "--demos" : "--data");
    if (!a.manifest.empty()) require_file(a.manifest, "--manifest");
    if (!a.init_model.empty()) require_file(a.init_model, "--init-model");
    if (a.manifest.empty() && a.split >= 0) throw UsageError("--split needs --manifest");
    if (!a.manifest.empty() && !a.history.empty()) {
      throw UsageError("--history applies to single fits; split histories are written next to the models");
    }
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  data = load_dataset(a.data);
  if (!a.init_model.empty()) {
    init = load_model(a.init_model);
    if (init->dx != data.dx || init->du != data.du || init->K != c.K || init->mode != c.mode) {
      throw UsageError("--init-model does not match the dataset dimensions, K or mode");
    }
  }
  std::vector<std::pair<int, Dataset>> jobs;
  if (!a.manifest.empty()) {
    manifest = load_manifest(a.manifest);
    if (a.split >= static_cast<int>(manifest.splits.size())) throw UsageError("--split out of range");
    for (int s = 0; s < static_cast<int>(manifest.splits.size()); ++s) {
      if (a.split >= 0 && s != a.split) continue;
      jobs.emplace_back(s, select_by_id(data, manifest.splits[static_cast<std::size_t>(s)]));
    }
    ensure_dir(a.out);
  } else {
    jobs.emplace_back(-1, data);
    ensure_parent(a.out);
    if (!a.history.empty()) ensure_parent(a.history);
  }

  const Provenance prov = provenance_of(sub, seed);
  int failures = 0;
  for (auto& [s, d] : jobs) {
    FitConfig cs = c;
    if (s >= 0) cs.seed = seed + 1000ULL * static_cast<std::uint64_t>(s);
    const std::string label = s >= 0 ? "split " + two_digits(s) : "fit";
    try {
      FitResult r = init ? fit_em_from(d, cs, *init) : fit_em(d, cs);
      for (const auto& w : r.warnings) std::cerr << label << ": warning: " << w << "\n";
      for (std::size_t i = 0; i < r.restart_errors.size(); ++i) {
        if (!r.restart_errors[i].empty()) std::cerr << label << ": restart " << i << " failed: " << r.restart_errors[i] << "\n";
      }
      fs::path model_path = a.out;
      fs::path history_path = a.history;
      if (s >= 0) {
        model_path = fs::path(a.out) / ("model_split_" + two_digits(s) + ".json");
        history_path = fs::path(a.out) / ("history_split_" + two_digits(s) + ".csv");
      }
      save_model(model_path, r.model, &prov);
      if (!history_path.empty()) write_history(history_path, r.history, prov, a.record_time);
      std::cout << label << ": loglik " << format_double(r.history.loglik.back()) << " after "
                << r.history.iterations() << " E-steps (restart " << r.best_restart << ") -> " << model_path.string()
                << "\n";
    } catch (const std::exception& e) {
      ++failures;
      std::cerr << label << ": failed: " << e.what() << "\n";
    }
  }
  if (failures == static_cast<int>(jobs.size())) {
    std::cerr << "all " << failures << " fits failed\n";
    return 2;
  }
  return 0;
}

// --- eval ---------------------------------------------------------------------

struct EvalArgs {
  std::string test;
  std::vector<std::string> models;
  std::vector<std::string> model_dirs;
  int expect_splits = 0;
  std::vector<int> horizons{1, 20, 40, 60, 80};
  std::string mode = "marginal";
  std::string out;
  std::string long_out;
  std::string json_out;
};

std::pair<std::string, std::string> split_tag(const std::string& text, const std::string& flag) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size()) {
    throw UsageError(flag + ": expected TAG=PATH, got '" + text + "'");
  }
  return {text.substr(0, eq), text.substr(eq + 1)};
}

int run_eval(const EvalArgs& a, const CLI::App& sub, std::uint64_t seed) {
  EvalOptions opts;
  opts.horizons = a.horizons;
  opts.seed = seed;
  std::vector<std::pair<std::string, std::vector<std::string>>> groups;  // tag -> model files, in order
  auto group_of = [&](const std::string& tag) -> std::vector<std::string>& {
    for (auto& g : groups) {
      if (g.first == tag) return g.second;
    }
    groups.emplace_back(tag, std::vector<std::string>{});
    return groups.back().second;
  };
  try {
    opts.mode = parse_forecast_mode(a.mode);
    if (a.horizons.empty()) throw UsageError("--horizons must not be empty");
    for (int h : a.horizons) {
      if (h < 1) throw UsageError("--horizons must be positive");
    }
    require_file(a.test, "--test");
    if (a.models.empty() && a.model_dirs.empty()) throw UsageError("give --model TAG=FILE or --models TAG=DIR");
    for (const auto& arg : a.models) {
      auto [tag, path] = split_tag(arg, "--model");
      require_file(path, "--model");
      group_of(tag).push_back(path);
    }
    for (const auto& arg : a.model_dirs) {
      auto [tag, dir] = split_tag(arg, "--models");
      if (!fs::is_directory(dir)) throw UsageError("--models: not a directory: " + dir);
      std::vector<std::string> files;
      for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.rfind("model_split_", 0) == 0 && e.path().extension() == ".json") files.push_back(e.path().string());
      }
      std::sort(files.begin(), files.end());
      if (a.expect_splits > 0) {
        std::vector<std::string> missing;
        for (int s = 0; s < a.expect_splits; ++s) {
          const fs::path want = fs::path(dir) / ("model_split_" + two_digits(s) + ".json");
          if (!fs::is_regular_file(want)) missing.push_back(want.filename().string());
        }
        if (!missing.empty()) {
          std::string msg = "--models " + tag + ": missing split models:";
          for (const auto& m : missing) msg += " " + m;
          throw UsageError(msg);
        }
      }
      if (files.empty()) throw UsageError("--models: no model_split_*.json files in " + dir);
      auto& g = group_of(tag);
      g.insert(g.end(), files.begin(), files.end());
    }
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  ensure_parent(a.out);
  if (!a.long_out.empty()) ensure_parent(a.long_out);
  if (!a.json_out.empty()) ensure_parent(a.json_out);

  const Dataset test = load_dataset(a.test);
  std::vector<ModelGroup> model_groups;
  for (const auto& [tag, files] : groups) {
    ModelGroup g;
    g.tag = tag;
    for (const auto& f : files) {
      HybridModel m = load_model(f);
      if (m.dx != test.dx || m.du != test.du) {
        throw std::runtime_error(f + ": model dimensions do not match the test set");
      }
      g.split_models.push_back(std::move(m));
    }
    model_groups.push_back(std::move(g));
  }
  const EvalReport report = evaluate(model_groups, test, opts);
  const Provenance prov = provenance_of(sub, seed);

  std::ostringstream csv;
  prov.write_csv_header(csv);
  report.write_csv(csv);
  write_file(a.out, csv.str());
  if (!a.long_out.empty()) {
    std::ostringstream lc;
    prov.write_csv_header(lc);
    report.write_long_csv(lc);
    write_file(a.long_out, lc.str());
  }
  if (!a.json_out.empty()) {
    Json j = Json::parse(report.to_json());
    j["provenance"] = prov.to_json();
    write_file(a.json_out, dump_json(j) + "\n");
  }
  report.write_csv(std::cout);
  return 0;
}

// --- rollout ------------------------------------------------------------------

struct RolloutArgs {
  std::string env = "pendulum";
  std::string obs = "joint";
  std::string model;
  std::string policy;
  int episodes = 50;
  int steps = 1500;
  std::string mode = "mean";
  std::string out_dir;
};

int run_rollout(const RolloutArgs& a, const CLI::App& sub, std::uint64_t seed) {
  EnvConfig env;
  ActMode mode = ActMode::Mean;
  try {
    env = EnvConfig::defaults(parse_env_kind(a.env), parse_obs_kind(a.obs));
    if (env.env == EnvKind::BouncingBall) throw UsageError("rollouts need an actuated system (pendulum or cartpole)");
    env.horizon = a.steps;
    env.seed = seed;
    env.validate();
    mode = parse_act_mode(a.mode);
    if (a.episodes < 1) throw UsageError("--episodes must be >= 1");
    if (a.model.empty() == a.policy.empty()) throw UsageError("give exactly one of --model or --policy");
    if (!a.policy.empty() && a.policy != "expert" && a.policy != "zero") {
      throw UsageError("--policy must be expert or zero");
    }
    if (!a.model.empty()) require_file(a.model, "--model");
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  std::optional<HybridModel> model;
  if (!a.model.empty()) {
    model = load_model(a.model);
    if (model->mode != LoopMode::ClosedLoop) throw UsageError("--model must be a closed-loop (distilled) model");
    if (model->dx != env.obs_dim() || model->du != env.control_dim()) {
      throw UsageError("--model dimensions do not match the " + to_string(env.env) + " " + to_string(env.obs) +
                       " observation space");
    }
  }
  if (!a.out_dir.empty()) ensure_dir(a.out_dir);

  Rng rng(seed);
  std::optional<SwingUpExpert> expert;
  if (a.policy == "expert") expert.emplace(env);
  std::vector<Trajectory> logs;
  int successes = 0;
  for (int e = 0; e < a.episodes; ++e) {
    const std::string id = "episode-" + three_digits(e);
    if (model) {
      RolloutResult r = rollout(env, *model, a.steps, mode, rng);
      r.traj.id = id;
      successes += r.success;
      if (!a.out_dir.empty()) {
        std::ostringstream os;
        r.write_belief_csv(os);
        write_file(fs::path(a.out_dir) / ("beliefs_" + three_digits(e) + ".csv"), os.str());
      }
      logs.push_back(std::move(r.traj));
    } else {
      const Vec s0 = sample_start(env, StartKind::Hanging, rng);
      Trajectory t = simulate(
          env, s0,
          [&](const Vec& s, Eigen::Index) { return expert ? (*expert)(s) : Vec(Vec::Zero(env.control_dim())); },
          a.steps);
      t.id = id;
      successes += success_criterion(t, env);
      logs.push_back(std::move(t));
    }
  }
  const double frac = static_cast<double>(successes) / a.episodes;
  const Provenance prov = provenance_of(sub, seed);
  if (!a.out_dir.empty()) {
    std::ostringstream os;
    os << dump_json(Json{{"provenance", prov.to_json()}}, -1) << "\n";
    write_dataset(os, Dataset::from(logs));
    write_file(fs::path(a.out_dir) / "rollouts.ndjson", os.str());
    const SuccessCriterion sc;
    Json summary{{"episodes", a.episodes},
                 {"successes", successes},
                 {"success_fraction", frac},
                 {"criterion",
                  {{"tail_fraction", sc.tail_fraction},
                   {"angle_tol", sc.angle_tol},
                   {"velocity_tol", sc.velocity_tol},
                   {"cart_limit", sc.cart_limit}}},
                 {"provenance", prov.to_json()}};
    write_file(fs::path(a.out_dir) / "summary.json", dump_json(summary) + "\n");
  }
  std::cout << "success " << successes << "/" << a.episodes << " (" << format_double(frac) << ")\n";
  return 0;
}

// --- count-params -------------------------------------------------------------

int run_count(const std::vector<std::string>& models) {
  for (const auto& m : models) require_file(m, "--model");
  std::cout << "# pi (K) + transition bias (K^2) + link weights + per regime A, B, c, diag(Lambda)"
               " [+ gain, offset, diag(Sigma) in closed loop]; initial-state Gaussians excluded\n";
  for (const auto& m : models) std::cout << m << "," << count_params(load_model(m)) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Identification of switching linear systems with state-dependent regime transitions"};
  app.set_version_flag("--version", std::string(HSID_VERSION));
  app.set_config("--config", "", "TOML/INI configuration file; command-line flags override it");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Seed of the run's random generator")->capture_default_str();

  SimulateArgs sim;
  CLI::App* simulate = app.add_subcommand("simulate", "Generate train/test datasets and the split manifest");
  simulate->add_option("--env", sim.env, "ball | pendulum | cartpole")->required();
  simulate->add_option("--obs", sim.obs, "joint | trig");
  simulate->add_option("--out-dir,-o", sim.out_dir, "Output directory")->required();
  simulate->add_option("--policy", sim.policy, "explore | expert");
  simulate->add_option("--n-train", sim.n_train, "Training trajectories");
  simulate->add_option("--n-test", sim.n_test, "Test trajectories");
  simulate->add_option("--n-splits", sim.n_splits, "Resampled training subsets");
  simulate->add_option("--split-size", sim.split_size, "Trajectories per subset");
  simulate->add_option("--steps", sim.steps, "Steps per trajectory (default: 600 ball, 250 otherwise)");
  simulate->add_option("--hold", sim.hold, "Steps each exploration action is held");
  simulate->add_option("--expert-noise", sim.expert_noise, "Std of noise added to expert actions");
  simulate->add_option("--dt", sim.dt, "Step length in seconds");
  simulate->add_option("--restitution", sim.restitution, "Ball restitution");
  simulate->add_option("--damping", sim.damping, "Pendulum damping");
  simulate->add_option("--torque-limit", sim.torque_limit, "Pendulum torque limit");
  simulate->add_option("--force-limit", sim.force_limit, "Cart-pole force limit");

  FitArgs fit;
  CLI::App* fit_cmd = app.add_subcommand("fit", "Fit (r)AR-HMMs by EM");
  fit_cmd->add_option("--data,-d", fit.data, "Training dataset (NDJSON)")->required();
  fit_cmd->add_option("--mode", fit.mode, "open | closed");
  add_fit_options(fit_cmd, fit);

  FitArgs dist;
  dist.mode = "closed";
  dist.config.K = 5;
  dist.config.lag = 1;
  dist.config.mode = LoopMode::ClosedLoop;
  CLI::App* distill_cmd = app.add_subcommand("distill", "Fit a closed-loop hybrid policy to demonstrations");
  distill_cmd->add_option("--demos,-d", dist.data, "Demonstration dataset (NDJSON)")->required();
  add_fit_options(distill_cmd, dist);

  EvalArgs ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Score h-step forecasts on a test set");
  eval_cmd->add_option("--test,-t", ev.test, "Test dataset (NDJSON)")->required();
  eval_cmd->add_option("--model", ev.models, "TAG=FILE, repeatable; files sharing a tag are splits");
  eval_cmd->add_option("--models", ev.model_dirs, "TAG=DIR with model_split_*.json files, repeatable");
  eval_cmd->add_option("--expect-splits", ev.expect_splits, "Fail listing missing split models");
  eval_cmd->add_option("--horizons", ev.horizons, "Forecast horizons")->delimiter(',');
  eval_cmd->add_option("--mode", ev.mode, "marginal | argmax | sample");
  eval_cmd->add_option("--out,-o", ev.out, "Report CSV")->required();
  eval_cmd->add_option("--long-out", ev.long_out, "Per-split long-format CSV");
  eval_cmd->add_option("--json-out", ev.json_out, "JSON summary with parameter counts");

  RolloutArgs ro;
  CLI::App* rollout_cmd = app.add_subcommand("rollout", "Run a policy on the simulator and report success");
  rollout_cmd->add_option("--env", ro.env, "pendulum | cartpole");
  rollout_cmd->add_option("--obs", ro.obs, "joint | trig");
  rollout_cmd->add_option("--model", ro.model, "Distilled closed-loop model");
  rollout_cmd->add_option("--policy", ro.policy, "expert | zero (instead of --model)");
  rollout_cmd->add_option("--episodes", ro.episodes, "Number of seeded episodes");
  rollout_cmd->add_option("--steps", ro.steps, "Steps per episode");
  rollout_cmd->add_option("--mode", ro.mode, "mean | argmax | sample");
  rollout_cmd->add_option("--out-dir,-o", ro.out_dir, "Rollout logs and summary");

  std::vector<std::string> count_models;
  CLI::App* count_cmd = app.add_subcommand("count-params", "Print parameter counts of model files");
  count_cmd->add_option("--model,-m", count_models, "Model file, repeatable")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*simulate) return run_simulate(sim, *simulate, seed);
    if (*fit_cmd) return run_fit(fit, *fit_cmd, seed, false);
    if (*distill_cmd) return run_fit(dist, *distill_cmd, seed, true);
    if (*eval_cmd) return run_eval(ev, *eval_cmd, seed);
    if (*rollout_cmd) return run_rollout(ro, *rollout_cmd, seed);
    if (*count_cmd) return run_count(count_models);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
