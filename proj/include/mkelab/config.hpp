#pragma once

// Flat key=value experiment configs: parsing, application onto
// ExperimentConfig, canonical text and hashing, sweep axes.

#include <fmt/format.h>

#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mkelab/error.hpp"
#include "mkelab/mke.hpp"

namespace mkelab {

using ConfigMap = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw Error(Errc::config, fmt::format("{}: expected a number, got '{}'", key, v));
  }
}

inline long long parse_integer(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw Error(Errc::config, fmt::format("{}: expected an integer, got '{}'", key, v));
  }
}

inline int parse_int(const std::string& key, const std::string& v) {
  const long long x = parse_integer(key, v);
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
    throw Error(Errc::config, fmt::format("{}: integer out of range", key));
  return static_cast<int>(x);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(Errc::config, fmt::format("{}: expected true/false, got '{}'", key, v));
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& item : split_list(v)) out.push_back(parse_int(key, item));
  return out;
}

inline std::vector<double> parse_real_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& item : split_list(v)) out.push_back(parse_real(key, item));
  return out;
}

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::string fmt_real(double x) { return fmt::format("{:.17g}", x); }

inline OptimizerKind parse_optimizer(const std::string& key, const std::string& v) {
  if (v == "adam") return OptimizerKind::adam;
  if (v == "sgd") return OptimizerKind::sgd;
  throw Error(Errc::config, fmt::format("{}: unknown optimizer '{}'", key, v));
}

inline std::string optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::adam ? "adam" : "sgd";
}

}  // namespace detail

/// Parses `key = value` lines; `#` starts a comment. Duplicate keys and
/// malformed lines are config errors.
inline ConfigMap parse_config_text(const std::string& text) {
  ConfigMap out;
  std::stringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(Errc::config, fmt::format("line {}: expected key=value", lineno));
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw Error(Errc::config, fmt::format("line {}: empty key", lineno));
    if (!out.emplace(key, value).second)
      throw Error(Errc::config, fmt::format("{}: duplicate key", key));
  }
  return out;
}

inline ConfigMap read_config_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::config, "cannot read config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

/// Sweep axes: transform families with their strengths, crossed with
/// baselines.
struct SweepSpec {
  std::vector<std::pair<std::string, std::vector<double>>> axes;
  std::vector<Baseline> baselines;

  bool empty() const { return axes.empty() || baselines.empty(); }
};

/// One-part transform of the named family at `strength`.
inline Transform make_transform(const std::string& kind, double strength, int layer) {
  if (kind == "none") return Transform::none();
  if (kind == "input_gaussian") return Transform::input_gaussian(strength);
  if (kind == "hidden_gaussian") return Transform::hidden_gaussian(strength, layer);
  if (kind == "dropout") return Transform::dropout(strength, layer);
  throw Error(Errc::config, fmt::format("transform.kind: unknown transform '{}'", kind));
}

inline int transform_layer(const Transform& t) {
  if (t.parts().empty()) return 0;
  return std::visit(
      [](const auto& p) {
        if constexpr (requires { p.layer; }) return p.layer;
        else return 0;
      },
      t.parts().front());
}

/// Applies every entry of `m` onto `cfg` (and `sweep` when given). Unknown
/// keys and malformed values are config errors naming the key.
inline void apply_config(const ConfigMap& m, ExperimentConfig& cfg, SweepSpec* sweep = nullptr) {
  using namespace detail;
  std::string kind = cfg.transform.kind_name();
  double strength = cfg.transform.strength();
  int layer = transform_layer(cfg.transform);
  bool transform_touched = false;
  std::vector<std::string> sweep_kinds;
  std::map<std::string, std::vector<double>> sweep_strengths;
  bool sweep_kinds_set = false;

  for (const auto& [key, v] : m) {
    if (key == "data.n") cfg.data.n = parse_int(key, v);
    else if (key == "data.noise_std") cfg.data.noise_std = parse_real(key, v);
    else if (key == "data.scale") cfg.data.scale = parse_real(key, v);
    else if (key == "data.split") {
      auto s = parse_int_list(key, v);
      if (s.size() != 3) throw Error(Errc::config, "data.split: expected three sizes n_l,n_u,n_test");
      cfg.data.n_labeled = s[0];
      cfg.data.n_unlabeled = s[1];
      cfg.data.n_test = s[2];
    } else if (key == "activation") {
      try {
        cfg.activation = parse_activation(v);
      } catch (const Error&) {
        throw Error(Errc::config, fmt::format("activation: unknown activation '{}'", v));
      }
    } else if (key == "teacher.hidden") cfg.teacher_hidden = parse_int_list(key, v);
    else if (key == "teacher.epochs") cfg.teacher_epochs = parse_int(key, v);
    else if (key == "teacher.lr") cfg.teacher_optimizer.learning_rate = parse_real(key, v);
    else if (key == "teacher.optimizer") cfg.teacher_optimizer.kind = parse_optimizer(key, v);
    else if (key == "student.hidden_um") cfg.um_student_hidden = parse_int_list(key, v);
    else if (key == "student.hidden_mm") cfg.mm_student_hidden = parse_int_list(key, v);
    else if (key == "student.epochs") cfg.student_epochs = parse_int(key, v);
    else if (key == "student.lr") cfg.student_optimizer.learning_rate = parse_real(key, v);
    else if (key == "student.optimizer") cfg.student_optimizer.kind = parse_optimizer(key, v);
    else if (key == "epochs") cfg.teacher_epochs = cfg.student_epochs = parse_int(key, v);
    else if (key == "transform.kind") {
      kind = v;
      transform_touched = true;
    } else if (key == "transform.strength") {
      strength = parse_real(key, v);
      transform_touched = true;
    } else if (key == "transform.layer") {
      layer = parse_int(key, v);
      transform_touched = true;
    } else if (key == "label_mode") {
      if (v == "hard") cfg.label_mode = LabelMode::hard;
      else if (v == "soft") cfg.label_mode = LabelMode::soft;
      else throw Error(Errc::config, fmt::format("label_mode: unknown mode '{}'", v));
    } else if (key == "loss_mode") {
      if (v == "combined") cfg.loss_mode = LossMode::combined;
      else if (v == "equivalent") cfg.loss_mode = LossMode::equivalent;
      else throw Error(Errc::config, fmt::format("loss_mode: unknown mode '{}'", v));
    } else if (key == "gamma") cfg.gamma = parse_real(key, v);
    else if (key == "confidence_weighting") cfg.confidence_weighting = parse_bool(key, v);
    else if (key == "baseline") {
      try {
        cfg.baseline = parse_baseline(v);
      } catch (const Error&) {
        throw Error(Errc::config, fmt::format("baseline: unknown baseline '{}'", v));
      }
    } else if (key == "noisy_dropout") cfg.noisy_dropout = parse_real(key, v);
    else if (key == "seeds") cfg.seeds = parse_int(key, v);
    else if (key == "seed") {
      const long long s = parse_integer(key, v);
      if (s < 0) throw Error(Errc::config, "seed: must be >= 0");
      cfg.base_seed = static_cast<std::uint64_t>(s);
    } else if (key == "sweep.transforms") {
      sweep_kinds = split_list(v);
      sweep_kinds_set = true;
    } else if (key == "sweep.baselines") {
      if (sweep) {
        sweep->baselines.clear();
        for (const auto& b : split_list(v)) {
          try {
            sweep->baselines.push_back(parse_baseline(b));
          } catch (const Error&) {
            throw Error(Errc::config, fmt::format("sweep.baselines: unknown baseline '{}'", b));
          }
        }
      }
    } else if (key.starts_with("sweep.strengths.")) {
      sweep_strengths[key.substr(16)] = parse_real_list(key, v);
    } else {
      throw Error(Errc::config, fmt::format("{}: unknown key", key));
    }
  }
  if (transform_touched) cfg.transform = make_transform(kind, strength, layer);

  if (sweep && (sweep_kinds_set || !sweep_strengths.empty())) {
    if (sweep_kinds_set) {
      sweep->axes.clear();
      for (const auto& k : sweep_kinds) {
        make_transform(k, 0.0, layer);
        auto it = sweep_strengths.find(k);
        if (it == sweep_strengths.end())
          throw Error(Errc::config, fmt::format("sweep.strengths.{}: missing", k));
        sweep->axes.emplace_back(k, it->second);
      }
    }
    for (const auto& [k, _] : sweep_strengths) {
      bool used = false;
      for (const auto& [ak, __] : sweep->axes) used = used || ak == k;
      if (!used)
        throw Error(Errc::config, fmt::format("sweep.strengths.{}: not listed in sweep.transforms", k));
    }
  }
}

/// The default grid: three transforms at no / weak / strong strength for
/// the UM student, MM student and supervised MM student.
inline SweepSpec default_sweep() {
  return {{{"input_gaussian", {0.0, 1.0, 2.0}},
           {"hidden_gaussian", {0.0, 5.0, 10.0}},
           {"dropout", {0.0, 0.4, 0.8}}},
          {Baseline::um_student, Baseline::mm_student, Baseline::mm_student_sup}};
}

/// Every effective setting as sorted key=value lines. `with_seeds` adds the
/// seed list.
inline std::string canonical_config(const ExperimentConfig& cfg, bool with_seeds = true) {
  using namespace detail;
  ConfigMap m;
  m["data.n"] = std::to_string(cfg.data.n);
  m["data.noise_std"] = fmt_real(cfg.data.noise_std);
  m["data.scale"] = fmt_real(cfg.data.scale);
  m["data.split"] = join_ints({cfg.data.n_labeled, cfg.data.n_unlabeled, cfg.data.n_test});
  m["activation"] = activation_name(cfg.activation);
  m["teacher.hidden"] = join_ints(cfg.teacher_hidden);
  m["teacher.epochs"] = std::to_string(cfg.teacher_epochs);
  m["teacher.lr"] = fmt_real(cfg.teacher_optimizer.learning_rate);
  m["teacher.optimizer"] = optimizer_name(cfg.teacher_optimizer.kind);
  m["student.hidden_um"] = join_ints(cfg.um_student_hidden);
  m["student.hidden_mm"] = join_ints(cfg.mm_student_hidden);
  m["student.epochs"] = std::to_string(cfg.student_epochs);
  m["student.lr"] = fmt_real(cfg.student_optimizer.learning_rate);
  m["student.optimizer"] = optimizer_name(cfg.student_optimizer.kind);
  m["transform.kind"] = cfg.transform.kind_name();
  m["transform.strength"] = fmt_real(cfg.transform.strength());
  m["transform.layer"] = std::to_string(transform_layer(cfg.transform));
  m["label_mode"] = label_mode_name(cfg.label_mode);
  m["loss_mode"] = loss_mode_name(cfg.loss_mode);
  m["gamma"] = fmt_real(cfg.gamma);
  m["confidence_weighting"] = cfg.confidence_weighting ? "true" : "false";
  m["baseline"] = baseline_name(cfg.baseline);
  m["noisy_dropout"] = fmt_real(cfg.noisy_dropout);
  if (with_seeds) {
    m["seed"] = std::to_string(cfg.base_seed);
    m["seeds"] = std::to_string(cfg.seeds);
  }
  std::string out;
  for (const auto& [k, v] : m) out += k + "=" + v + "\n";
  return out;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hash_hex(std::uint64_t h) { return fmt::format("{:016x}", h); }

/// Hash of the effective configuration; independent of key order in the
/// source file.
inline std::string config_hash(const ExperimentConfig& cfg, bool with_seeds = true) {
  return hash_hex(fnv1a64(canonical_config(cfg, with_seeds)));
}

}  // namespace mkelab
