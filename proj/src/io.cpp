#include "hsid/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace hsid {
namespace {

[[noreturn]] void malformed(const std::string& what, const std::string& detail) {
  throw std::runtime_error(what + ": " + detail);
}

void emit(const Json& j, int indent, int depth, std::string& out) {
  const bool pretty = indent >= 0;
  auto newline = [&](int d) {
    if (!pretty) return;
    out += '\n';
    out.append(static_cast<std::size_t>(d * indent), ' ');
  };
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ',';
        first = false;
        newline(depth + 1);
        out += Json(it.key()).dump();
        out += pretty ? ": " : ":";
        emit(it.value(), indent, depth + 1, out);
      }
      newline(depth);
      out += '}';
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      // Arrays of scalars stay on one line.
      bool scalars = true;
      for (const auto& e : j) scalars = scalars && !e.is_structured();
      out += '[';
      bool first = true;
      for (const auto& e : j) {
        if (!first) out += pretty && scalars ? ", " : ",";
        first = false;
        if (!scalars) newline(depth + 1);
        emit(e, indent, depth + 1, out);
      }
      if (!scalars) newline(depth);
      out += ']';
      return;
    }
    case Json::value_t::number_float:
      out += format_double(j.get<double>());
      return;
    default:
      out += j.dump();
      return;
  }
}

Json expect(const Json& j, const char* key, const std::string& what) {
  if (!j.is_object() || !j.contains(key)) malformed(what, std::string("missing field '") + key + "'");
  return j.at(key);
}

int expect_int(const Json& j, const char* key, const std::string& what) {
  const Json v = expect(j, key, what);
  if (!v.is_number_integer()) malformed(what, std::string("field '") + key + "' must be an integer");
  return v.get<int>();
}

std::string expect_string(const Json& j, const char* key, const std::string& what) {
  const Json v = expect(j, key, what);
  if (!v.is_string()) malformed(what, std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

double number(const Json& v, const std::string& what) {
  if (!v.is_number()) malformed(what, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) malformed(what, "non-finite number");
  return d;
}

LinkKind parse_link(const std::string& s, const std::string& what) {
  if (s == "stationary") return LinkKind::Stationary;
  if (s == "linear") return LinkKind::Linear;
  if (s == "polynomial") return LinkKind::Polynomial;
  if (s == "perceptron") return LinkKind::Perceptron;
  malformed(what, "unknown transition kind '" + s + "'");
}

}  // namespace

std::string format_double(double v) {
  if (!std::isfinite(v)) throw std::invalid_argument("format_double: non-finite value");
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s(buf);
  // Keep a float marker so that -0.0 and integral values parse back as doubles.
  if (s.find_first_of(".eE") == std::string::npos) s += ".0";
  return s;
}

std::string dump_json(const Json& j, int indent) {
  std::string out;
  emit(j, indent, 0, out);
  return out;
}

Json to_json(const Mat& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Json to_json(const Vec& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Mat mat_from_json(const Json& j, const std::string& what, Eigen::Index rows, Eigen::Index cols) {
  if (!j.is_array()) malformed(what, "expected a list of rows");
  const auto r = static_cast<Eigen::Index>(j.size());
  if (rows >= 0 && r != rows) {
    malformed(what, "expected " + std::to_string(rows) + " rows, found " + std::to_string(r));
  }
  Eigen::Index c = cols;
  if (r > 0) {
    if (!j[0].is_array()) malformed(what, "expected a list of rows");
    if (c < 0) c = static_cast<Eigen::Index>(j[0].size());
  } else if (c < 0) {
    c = 0;
  }
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    const Json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != c) {
      malformed(what, "row " + std::to_string(i) + " must have " + std::to_string(c) + " entries");
    }
    for (Eigen::Index k = 0; k < c; ++k) m(i, k) = number(row[static_cast<std::size_t>(k)], what);
  }
  return m;
}

Vec vec_from_json(const Json& j, const std::string& what, Eigen::Index size) {
  if (!j.is_array()) malformed(what, "expected a list of numbers");
  const auto n = static_cast<Eigen::Index>(j.size());
  if (size >= 0 && n != size) {
    malformed(what, "expected " + std::to_string(size) + " entries, found " + std::to_string(n));
  }
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = number(j[static_cast<std::size_t>(i)], what);
  return v;
}

Json Provenance::to_json() const {
  return Json{{"version", version}, {"seed", seed}, {"config_hash", config_hash}};
}

void Provenance::write_csv_header(std::ostream& os) const {
  os << "# hsid-version=" << version << "\n# seed=" << seed << "\n# config-hash=" << config_hash << '\n';
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const std::map<std::string, std::string>& entries) {
  std::string text;
  for (const auto& [k, v] : entries) text += k + "=" + v + "\n";
  return fnv1a_hex(text);
}

Json model_to_json(const HybridModel& model) {
  model.validate();
  Json j;
  j["version"] = 1;
  j["mode"] = to_string(model.mode);
  j["K"] = model.K;
  j["d_x"] = model.dx;
  j["d_u"] = model.du;
  j["lag"] = model.lag;
  j["poly_degree"] = model.poly_degree;
  j["pi"] = to_json(model.init.pi);
  Json init = Json::array();
  for (int k = 0; k < model.K; ++k) {
    init.push_back(Json{{"mu", to_json(model.init.mu[k])}, {"omega_cov", to_json(model.init.omega_cov[k])}});
  }
  j["init"] = std::move(init);
  Json dyn = Json::array();
  for (const auto& d : model.dynamics) {
    dyn.push_back(Json{{"A", to_json(d.A)}, {"B", to_json(d.B)}, {"c", to_json(d.c)}, {"lam_cov", to_json(d.lam_cov)}});
  }
  j["dynamics"] = std::move(dyn);
  if (model.mode == LoopMode::ClosedLoop) {
    Json ctl = Json::array();
    for (const auto& c : model.controllers) {
      ctl.push_back(Json{{"gain", to_json(c.gain)}, {"offset", to_json(c.offset)}, {"sigma_cov", to_json(c.sigma_cov)}});
    }
    j["controllers"] = std::move(ctl);
  }
  const auto& tm = model.transition;
  Json t;
  t["kind"] = to_string(tm.kind);
  t["degree"] = tm.degree;
  t["hidden_units"] = tm.hidden_units;
  t["per_pair"] = tm.per_pair;
  t["bias"] = to_json(tm.bias);
  t["params"] = to_json(tm.params);
  t["standardizer"] = Json{{"mean", to_json(tm.standardizer.mean)}, {"std", to_json(tm.standardizer.std)}};
  j["transition"] = std::move(t);
  return j;
}

HybridModel model_from_json(const Json& j) {
  const std::string what = "model";
  if (!j.is_object()) malformed(what, "document must be an object");
  if (expect_int(j, "version", what) != 1) malformed(what, "unsupported version");
  HybridModel m;
  const std::string mode = expect_string(j, "mode", what);
  if (mode == "open") {
    m.mode = LoopMode::OpenLoop;
  } else if (mode == "closed") {
    m.mode = LoopMode::ClosedLoop;
  } else {
    malformed(what, "mode must be 'open' or 'closed'");
  }
  m.K = expect_int(j, "K", what);
  m.dx = expect_int(j, "d_x", what);
  m.du = expect_int(j, "d_u", what);
  m.lag = expect_int(j, "lag", what);
  m.poly_degree = expect_int(j, "poly_degree", what);
  if (m.K < 1 || m.dx < 1 || m.du < 0 || m.lag < 0 || m.poly_degree < 1) malformed(what, "invalid shape fields");
  const int K = m.K;
  const int dx = m.dx;
  const int du = m.du;
  m.init.pi = vec_from_json(expect(j, "pi", what), "model.pi", K);

  const Json init = expect(j, "init", what);
  const Json dyn = expect(j, "dynamics", what);
  if (!init.is_array() || static_cast<int>(init.size()) != K) malformed(what, "init must list K regimes");
  if (!dyn.is_array() || static_cast<int>(dyn.size()) != K) malformed(what, "dynamics must list K regimes");
  for (int k = 0; k < K; ++k) {
    const auto tag = "model regime " + std::to_string(k);
    m.init.mu.push_back(vec_from_json(expect(init[k], "mu", tag), tag + " mu", dx));
    m.init.omega_cov.push_back(mat_from_json(expect(init[k], "omega_cov", tag), tag + " omega_cov", dx, dx));
    RegimeDynamics d;
    d.A = mat_from_json(expect(dyn[k], "A", tag), tag + " A", dx, dx);
    d.B = mat_from_json(expect(dyn[k], "B", tag), tag + " B", dx, du);
    d.c = vec_from_json(expect(dyn[k], "c", tag), tag + " c", dx);
    d.lam_cov = mat_from_json(expect(dyn[k], "lam_cov", tag), tag + " lam_cov", dx, dx);
    m.dynamics.push_back(std::move(d));
  }
  if (m.mode == LoopMode::ClosedLoop) {
    const Json ctl = expect(j, "controllers", what);
    if (!ctl.is_array() || static_cast<int>(ctl.size()) != K) malformed(what, "controllers must list K regimes");
    const int dphi = m.controller_feature_dim();
    for (int k = 0; k < K; ++k) {
      const auto tag = "model controller " + std::to_string(k);
      RegimeController c;
      c.gain = mat_from_json(expect(ctl[k], "gain", tag), tag + " gain", du, dphi);
      c.offset = vec_from_json(expect(ctl[k], "offset", tag), tag + " offset", du);
      c.sigma_cov = mat_from_json(expect(ctl[k], "sigma_cov", tag), tag + " sigma_cov", du, du);
      m.controllers.push_back(std::move(c));
    }
  } else if (j.contains("controllers")) {
    malformed(what, "open-loop model must not carry controllers");
  }

  const Json t = expect(j, "transition", what);
  const std::string tw = "model transition";
  TransitionModel tm;
  switch (parse_link(expect_string(t, "kind", tw), tw)) {
    case LinkKind::Stationary: tm = TransitionModel::stationary(K, dx, du); break;
    case LinkKind::Linear: tm = TransitionModel::linear(K, dx, du, expect(t, "per_pair", tw).get<bool>()); break;
    case LinkKind::Polynomial:
      tm = TransitionModel::polynomial(K, dx, du, expect_int(t, "degree", tw), expect(t, "per_pair", tw).get<bool>());
      break;
    case LinkKind::Perceptron: tm = TransitionModel::perceptron(K, dx, du, expect_int(t, "hidden_units", tw)); break;
  }
  tm.bias = mat_from_json(expect(t, "bias", tw), tw + " bias", K, K);
  tm.params = vec_from_json(expect(t, "params", tw), tw + " params", tm.param_count());
  const Json st = expect(t, "standardizer", tw);
  tm.standardizer.mean = vec_from_json(expect(st, "mean", tw), tw + " standardizer mean", dx + du);
  tm.standardizer.std = vec_from_json(expect(st, "std", tw), tw + " standardizer std", dx + du);
  m.transition = std::move(tm);
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    malformed(what, e.what());
  }
  return m;
}

void save_model(const std::filesystem::path& path, const HybridModel& model, const Provenance* provenance) {
  Json j = model_to_json(model);
  if (provenance != nullptr) j["provenance"] = provenance->to_json();
  write_file(path, dump_json(j) + "\n");
}

HybridModel load_model(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw std::runtime_error(path.string() + ": invalid JSON: " + e.what());
  }
  try {
    return model_from_json(j);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_dataset(std::ostream& os, const Dataset& data) {
  for (const auto& tr : data.trajectories) {
    Json rec;
    rec["id"] = tr.id;
    rec["dt"] = tr.dt;
    rec["xs"] = to_json(Mat(tr.xs.transpose()));
    rec["us"] = to_json(Mat(tr.us.transpose()));
    os << dump_json(rec, -1) << '\n';
  }
}

Dataset read_dataset(std::istream& is, const std::string& source) {
  std::vector<Trajectory> trajs;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    Json rec;
    try {
      rec = Json::parse(line);
    } catch (const Json::parse_error& e) {
      malformed(where, std::string("invalid JSON: ") + e.what());
    }
    if (rec.is_object() && rec.contains("provenance")) continue;
    Trajectory tr;
    tr.id = expect_string(rec, "id", where);
    tr.dt = number(expect(rec, "dt", where), where + " dt");
    const Json xs = expect(rec, "xs", where);
    tr.xs = mat_from_json(xs, where + " xs").transpose();
    tr.us = mat_from_json(expect(rec, "us", where), where + " us", tr.length(), -1).transpose();
    try {
      tr.validate();
    } catch (const std::invalid_argument& e) {
      malformed(where, e.what());
    }
    trajs.push_back(std::move(tr));
  }
  if (trajs.empty()) malformed(source, "no trajectories");
  try {
    return Dataset::from(std::move(trajs));
  } catch (const std::invalid_argument& e) {
    malformed(source, e.what());
  }
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ostringstream os;
  write_dataset(os, data);
  write_file(path, os.str());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::istringstream is(read_file(path));
  return read_dataset(is, path.string());
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest, const Provenance* provenance) {
  Json j;
  j["train"] = manifest.train;
  j["test"] = manifest.test;
  j["splits"] = manifest.splits;
  if (provenance != nullptr) j["provenance"] = provenance->to_json();
  write_file(path, dump_json(j) + "\n");
}

Manifest load_manifest(const std::filesystem::path& path) {
  const std::string what = path.string();
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    malformed(what, std::string("invalid JSON: ") + e.what());
  }
  Manifest m;
  try {
    m.train = expect(j, "train", what).get<std::vector<std::string>>();
    m.test = expect(j, "test", what).get<std::vector<std::string>>();
    m.splits = expect(j, "splits", what).get<std::vector<std::vector<std::string>>>();
  } catch (const Json::type_error& e) {
    malformed(what, std::string("ids must be strings: ") + e.what());
  }
  return m;
}

Dataset select_by_id(const Dataset& data, const std::vector<std::string>& ids) {
  std::vector<Trajectory> out;
  for (const auto& id : ids) {
    bool found = false;
    for (const auto& tr : data.trajectories) {
      if (tr.id == id) {
        out.push_back(tr);
        found = true;
        break;
      }
    }
    if (!found) throw std::runtime_error("trajectory id '" + id + "' not found in dataset");
  }
  return Dataset::from(std::move(out));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
    if (!out.flush()) throw std::runtime_error("write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace hsid
