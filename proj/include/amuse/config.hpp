// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "amuse/data.hpp"
#include "amuse/error.hpp"
#include "amuse/experiments.hpp"

namespace amuse {

inline constexpr const char* kToolVersion = "0.1.0";

enum class Source { default_value, file, env, flag };

inline const char* to_string(Source s) {
  switch (s) {
    case Source::default_value: return "default";
    case Source::file: return "file";
    case Source::env: return "env";
    case Source::flag: return "flag";
  }
  return "?";
}

struct RunConfig {
  std::string experiment = "train";
  std::string dataset = "synthetic";  // synthetic | idx
  std::string idx_images;
  std::string idx_labels;
  std::size_t subset = 5000;  // first n samples of an IDX file
  std::size_t synth_n = 5000;
  std::size_t synth_d = 64;
  std::size_t synth_k = 10;
  double synth_separation = 14.0;
  std::uint64_t data_seed = 1;
  TrainConfig train;
  std::string out_dir = "runs";
  double scale_alpha = 1.0;
  double scale_gamma = 1.0;
  std::size_t scale_start = 500;
  double ewa_coeff = 0.9;
  double decay_lr = 1e-4;
  std::size_t decay_steps = 500;
  std::size_t viz_T = 10000;
  std::vector<double> viz_rhos{0.0, 0.3, 0.7, 1.0};

  std::map<std::string, Source> source;  // provenance per key
};

inline RunConfig default_run_config() {
  RunConfig rc;
  rc.train.model.hidden = {200, 200};
  rc.train.model.activation = Activation::tanh;
  rc.train.opt.kind = OptimizerKind::amuse;
  rc.train.opt.lr = 1e-3;
  rc.train.steps = 2000;
  rc.train.batch_size = 50;
  rc.train.probe.probes = 0;
  return rc;
}

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  const auto e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (trim(text.substr(used)).empty()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + text + "'");
}

inline std::uint64_t parse_count(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t.empty() || !std::all_of(t.begin(), t.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
  }
  try {
    return std::stoull(t);
  } catch (const std::exception&) {
    throw ConfigError(key + ": integer out of range: '" + text + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1") return true;
  if (t == "false" || t == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

inline std::vector<std::string> split_list(const std::string& text) {
  std::string t = trim(text);
  if (!t.empty() && t.front() == '[' && t.back() == ']') t = t.substr(1, t.size() - 2);
  std::vector<std::string> out;
  std::stringstream ss(t);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.size() >= 2 && item.front() == '"' && item.back() == '"') item = item.substr(1, item.size() - 2);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename E>
E parse_enum(const std::string& key, const std::string& text, const std::vector<std::pair<const char*, E>>& options) {
  const std::string t = trim(text);
  std::string valid;
  for (const auto& [name, value] : options) {
    if (t == name) return value;
    valid += (valid.empty() ? "" : ", ") + std::string(name);
  }
  throw ConfigError(key + ": '" + text + "' is not one of {" + valid + "}");
}

inline const std::vector<std::pair<const char*, OptimizerKind>>& kind_names() {
  static const std::vector<std::pair<const char*, OptimizerKind>> v{
      {"sgd", OptimizerKind::sgd},       {"adamw", OptimizerKind::adamw},       {"muon", OptimizerKind::muon},
      {"sf_sgd", OptimizerKind::sf_sgd}, {"sf_adamw", OptimizerKind::sf_adamw}, {"sf_muon", OptimizerKind::sf_muon},
      {"amuse", OptimizerKind::amuse}};
  return v;
}

using Json = nlohmann::ordered_json;

template <typename T>
Json list_json(const std::vector<T>& v) {
  Json j = Json::array();
  for (const auto& x : v) j.push_back(x);
  return j;
}

}  // namespace detail

/// One configuration key: how to read it from text and how to echo it.
struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<nlohmann::ordered_json(const RunConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
  using detail::parse_bool;
  using detail::parse_count;
  using detail::parse_double;
  using detail::parse_enum;
  using J = nlohmann::ordered_json;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto add = [&k](std::string name, std::string help, std::function<void(RunConfig&, const std::string&)> set,
                    std::function<J(const RunConfig&)> get) {
      k.push_back(ConfigKey{std::move(name), std::move(help), std::move(set), std::move(get)});
    };
#define AMUSE_DOUBLE(key, field, help) \
  add(key, help, [](RunConfig& c, const std::string& s) { c.field = parse_double(key, s); }, [](const RunConfig& c) { return J(c.field); })
#define AMUSE_COUNT(key, field, help)                                                                       \
  add(key, help, [](RunConfig& c, const std::string& s) { c.field = static_cast<decltype(c.field)>(parse_count(key, s)); }, \
      [](const RunConfig& c) { return J(c.field); })
#define AMUSE_BOOL(key, field, help) \
  add(key, help, [](RunConfig& c, const std::string& s) { c.field = parse_bool(key, s); }, [](const RunConfig& c) { return J(c.field); })
#define AMUSE_STRING(key, field, help) \
  add(key, help, [](RunConfig& c, const std::string& s) { c.field = detail::trim(s); }, [](const RunConfig& c) { return J(c.field); })

    AMUSE_STRING("experiment", experiment, "run label used in output file names");
    add("dataset", "synthetic | idx",
        [](RunConfig& c, const std::string& s) {
          c.dataset = parse_enum<std::string>("dataset", s, {{"synthetic", "synthetic"}, {"idx", "idx"}});
        },
        [](const RunConfig& c) { return J(c.dataset); });
    AMUSE_STRING("idx_images", idx_images, "IDX image file (dataset = idx)");
    AMUSE_STRING("idx_labels", idx_labels, "IDX label file (dataset = idx)");
    AMUSE_COUNT("subset", subset, "use the first n IDX samples");
    AMUSE_COUNT("synth_n", synth_n, "synthetic sample count");
    AMUSE_COUNT("synth_d", synth_d, "synthetic feature dimension");
    AMUSE_COUNT("synth_k", synth_k, "synthetic class count");
    AMUSE_DOUBLE("synth_separation", synth_separation, "distance between synthetic class means");
    AMUSE_COUNT("data_seed", data_seed, "synthetic data seed");
    add("hidden", "hidden layer widths, e.g. 200,200",
        [](RunConfig& c, const std::string& s) {
          c.train.model.hidden.clear();
          for (const auto& w : detail::split_list(s)) {
            const auto v = parse_count("hidden", w);
            if (v == 0) throw ConfigError("hidden: widths must be positive");
            c.train.model.hidden.push_back(v);
          }
        },
        [](const RunConfig& c) { return detail::list_json(c.train.model.hidden); });
    add("activation", "tanh | relu",
        [](RunConfig& c, const std::string& s) {
          c.train.model.activation = parse_enum<Activation>("activation", s, {{"tanh", Activation::tanh}, {"relu", Activation::relu}});
        },
        [](const RunConfig& c) { return J(to_string(c.train.model.activation)); });
    AMUSE_BOOL("muon_first_last", train.model.muon_first_last, "route first/last weights to Muon too");
    add("optimizer", "sgd | adamw | muon | sf_sgd | sf_adamw | sf_muon | amuse",
        [](RunConfig& c, const std::string& s) { c.train.opt.kind = parse_enum("optimizer", s, detail::kind_names()); },
        [](const RunConfig& c) { return J(to_string(c.train.opt.kind)); });
    AMUSE_DOUBLE("lr", train.opt.lr, "learning rate (Muon group / base optimizer)");
    AMUSE_DOUBLE("aux_lr", train.opt.aux_lr, "auxiliary-group learning rate; 0 = lr");
    AMUSE_DOUBLE("weight_decay", train.opt.weight_decay, "decoupled weight decay");
    AMUSE_COUNT("warmup_steps", train.opt.warmup_steps, "T0: lr warmup length and beta pivot");
    AMUSE_DOUBLE("muon_momentum", train.opt.muon_momentum, "Muon momentum mu");
    AMUSE_BOOL("nesterov", train.opt.nesterov, "Nesterov input to the orthogonalization");
    AMUSE_DOUBLE("adamw_beta1", train.opt.adamw_beta1, "AdamW first-moment decay");
    AMUSE_DOUBLE("adamw_beta2", train.opt.adamw_beta2, "AdamW second-moment decay");
    AMUSE_DOUBLE("sgd_momentum", train.opt.sgd_momentum, "heavy-ball momentum of (non-SF) SGD");
    add("aux_optimizer", "sgd | adamw (non-Muon parameters)",
        [](RunConfig& c, const std::string& s) {
          c.train.opt.aux = parse_enum<AuxOptimizer>("aux_optimizer", s, {{"sgd", AuxOptimizer::sgd}, {"adamw", AuxOptimizer::adamw}});
        },
        [](const RunConfig& c) { return J(to_string(c.train.opt.aux)); });
    AMUSE_DOUBLE("beta1", train.opt.beta1, "SF interpolation beta (fixed) / AMUSE beta_1");
    AMUSE_DOUBLE("rho", train.opt.rho, "AMUSE beta growth exponent");
    AMUSE_DOUBLE("grad_clip", train.opt.grad_clip, "global-norm gradient bound; 0 = off");
    add("lr_schedule", "constant | cosine | linear_decay",
        [](RunConfig& c, const std::string& s) {
          c.train.opt.lr_schedule = parse_enum<LrSchedule>(
              "lr_schedule", s,
              {{"constant", LrSchedule::constant}, {"cosine", LrSchedule::cosine}, {"linear_decay", LrSchedule::linear_decay}});
        },
        [](const RunConfig& c) { return J(to_string(c.train.opt.lr_schedule)); });
    AMUSE_COUNT("decay_start", train.opt.decay_start, "linear_decay: first decaying step");
    AMUSE_COUNT("decay_end", train.opt.decay_end, "linear_decay: step at which lr reaches 0");
    add("averaging", "lr_weighted | uniform | frozen",
        [](RunConfig& c, const std::string& s) {
          c.train.opt.averaging = parse_enum<Averaging>(
              "averaging", s,
              {{"lr_weighted", Averaging::lr_weighted}, {"uniform", Averaging::uniform}, {"frozen", Averaging::frozen}});
        },
        [](const RunConfig& c) { return J(to_string(c.train.opt.averaging)); });
    add("beta_form", "exact | closed",
        [](RunConfig& c, const std::string& s) {
          c.train.opt.beta_form = parse_enum<BetaForm>("beta_form", s, {{"exact", BetaForm::exact}, {"closed", BetaForm::closed}});
        },
        [](const RunConfig& c) { return J(to_string(c.train.opt.beta_form)); });
    add("ns_coeffs", "muon_fast | cubic_exact",
        [](RunConfig& c, const std::string& s) {
          c.train.opt.ns_coeffs = parse_enum<NsCoefficients>(
              "ns_coeffs", s, {{"muon_fast", NsCoefficients::muon_fast}, {"cubic_exact", NsCoefficients::cubic_exact}});
        },
        [](const RunConfig& c) {
          return J(c.train.opt.ns_coeffs == NsCoefficients::muon_fast ? "muon_fast" : "cubic_exact");
        });
    AMUSE_COUNT("ns_iters", train.opt.ns_iters, "Newton-Schulz iterations");
    AMUSE_BOOL("ns_rms_match", train.opt.ns_rms_match, "scale O(M) by sqrt(max(rows, cols))");
    AMUSE_COUNT("seed", train.seed, "model init and batch order seed");
    AMUSE_COUNT("steps", train.steps, "training steps (also the cosine horizon)");
    AMUSE_COUNT("batch_size", train.batch_size, "minibatch size");
    add("probes", "comma list of subspace, grad_alpha, norms, cosine",
        [](RunConfig& c, const std::string& s) {
          unsigned bits = 0;
          for (const auto& p : detail::split_list(s)) {
            bits |= parse_enum<unsigned>("probes", p,
                                         {{"subspace", kProbeSubspace}, {"grad_alpha", kProbeGradAlpha},
                                          {"norms", kProbeNorms}, {"cosine", kProbeCosine}, {"none", 0u}});
          }
          c.train.probe.probes = bits;
        },
        [](const RunConfig& c) {
          J arr = J::array();
          const unsigned b = c.train.probe.probes;
          if (b & kProbeSubspace) arr.push_back("subspace");
          if (b & kProbeGradAlpha) arr.push_back("grad_alpha");
          if (b & kProbeNorms) arr.push_back("norms");
          if (b & kProbeCosine) arr.push_back("cosine");
          return arr;
        });
    AMUSE_COUNT("probe_every", train.probe.every, "measurement cadence");
    AMUSE_COUNT("probe_start", train.probe.start, "first measured step");
    AMUSE_COUNT("probe_end", train.probe.end, "last measured step; 0 = no limit");
    AMUSE_COUNT("k", train.probe.k, "dominant subspace size; 0 = number of classes");
    AMUSE_COUNT("lanczos_iters", train.probe.lanczos_iters, "Lanczos iteration cap");
    AMUSE_DOUBLE("lanczos_tol", train.probe.lanczos_tol, "relative Ritz residual tolerance");
    add("alphas", "interpolation points for grad_alpha",
        [](RunConfig& c, const std::string& s) {
          c.train.probe.alphas.clear();
          for (const auto& a : detail::split_list(s)) c.train.probe.alphas.push_back(parse_double("alphas", a));
        },
        [](const RunConfig& c) { return detail::list_json(c.train.probe.alphas); });
    add("anchor", "point | shared (grad_alpha basis anchor)",
        [](RunConfig& c, const std::string& s) {
          c.train.probe.anchor = parse_enum<AnchorMode>("anchor", s, {{"point", AnchorMode::point}, {"shared", AnchorMode::shared}});
        },
        [](const RunConfig& c) { return J(to_string(c.train.probe.anchor)); });
    AMUSE_COUNT("hessian_samples", train.probe.hessian_samples, "Hessian over the first n samples; 0 = all");
    AMUSE_COUNT("eval_every", train.eval_every, "full-data loss cadence");
    AMUSE_COUNT("checkpoint_every", train.checkpoint_every, "checkpoint cadence; 0 = final only");
    AMUSE_STRING("out_dir", out_dir, "output root");
    AMUSE_DOUBLE("scale_alpha", scale_alpha, "dominant scaling factor");
    AMUSE_DOUBLE("scale_gamma", scale_gamma, "bulk scaling factor");
    AMUSE_COUNT("scale_start", scale_start, "first scaled step");
    AMUSE_DOUBLE("ewa_coeff", ewa_coeff, "EWA coefficient in (0, 1)");
    AMUSE_DOUBLE("decay_lr", decay_lr, "decay probe starting lr");
    AMUSE_COUNT("decay_steps", decay_steps, "decay probe length");
    AMUSE_COUNT("viz_T", viz_T, "schedule-viz horizon");
    add("viz_rhos", "schedule-viz rho values",
        [](RunConfig& c, const std::string& s) {
          c.viz_rhos.clear();
          for (const auto& a : detail::split_list(s)) c.viz_rhos.push_back(parse_double("viz_rhos", a));
        },
        [](const RunConfig& c) { return detail::list_json(c.viz_rhos); });
#undef AMUSE_DOUBLE
#undef AMUSE_COUNT
#undef AMUSE_BOOL
#undef AMUSE_STRING
    return k;
  }();
  return keys;
}

inline const ConfigKey* find_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (k.name == name) return &k;
  return nullptr;
}

/// Range and consistency checks beyond parsing. Throws ConfigError.
inline void validate_run_config(const RunConfig& rc) {
  auto range = [](const std::string& key, double v, bool ok, const char* valid) {
    if (!ok) throw ConfigError(key + " = " + std::to_string(v) + " out of range; valid: " + valid);
  };
  if (rc.dataset == "idx") {
    for (const auto* p : {&rc.idx_images, &rc.idx_labels}) {
      if (p->empty()) throw ConfigError("dataset = idx needs idx_images and idx_labels");
      if (!std::filesystem::exists(*p)) throw ConfigError("dataset path does not exist: " + *p);
    }
    range("subset", static_cast<double>(rc.subset), rc.subset >= 1, "[1, inf)");
  } else {
    range("synth_k", static_cast<double>(rc.synth_k), rc.synth_k >= 2, "[2, inf)");
    range("synth_d", static_cast<double>(rc.synth_d), rc.synth_d >= rc.synth_k, "[synth_k, inf)");
    range("synth_n", static_cast<double>(rc.synth_n), rc.synth_n >= 1, "[1, inf)");
    range("synth_separation", rc.synth_separation, rc.synth_separation >= 0.0, "[0, inf)");
  }
  OptimizerConfig oc = rc.train.opt;
  oc.total_steps = rc.train.steps;
  oc.validate();
  range("steps", static_cast<double>(rc.train.steps), rc.train.steps >= 1, "[1, inf)");
  range("batch_size", static_cast<double>(rc.train.batch_size), rc.train.batch_size >= 1, "[1, inf)");
  range("lanczos_tol", rc.train.probe.lanczos_tol, rc.train.probe.lanczos_tol > 0.0, "(0, inf)");
  range("lanczos_iters", static_cast<double>(rc.train.probe.lanczos_iters), rc.train.probe.lanczos_iters >= 1, "[1, inf)");
  for (double a : rc.train.probe.alphas) range("alphas", a, a >= 0.0 && a <= 1.0, "[0, 1]");
  range("ewa_coeff", rc.ewa_coeff, rc.ewa_coeff > 0.0 && rc.ewa_coeff < 1.0, "(0, 1)");
  range("decay_lr", rc.decay_lr, rc.decay_lr >= 0.0, "[0, inf)");
  range("decay_steps", static_cast<double>(rc.decay_steps), rc.decay_steps >= 1, "[1, inf)");
  range("scale_start", static_cast<double>(rc.scale_start), rc.scale_start >= 1, "[1, inf)");
  range("viz_T", static_cast<double>(rc.viz_T), rc.viz_T >= rc.train.opt.warmup_steps, "[warmup_steps, inf)");
  for (double r : rc.viz_rhos) range("viz_rhos", r, r >= 0.0 && r <= 1.0, "[0, 1]");
  if (rc.train.model.hidden.empty()) throw ConfigError("hidden: need at least one hidden layer");
}

/// Reads a flat JSON object of key -> value, or a run manifest (whose
/// "config" entries are {"value": ..., "source": ...}); flags override it.
/// Every key ends up with a provenance entry.
inline RunConfig parse_config(const std::string& path, const std::vector<std::pair<std::string, std::string>>& flags) {
  RunConfig rc = default_run_config();
  for (const auto& k : config_keys()) rc.source[k.name] = Source::default_value;

  auto apply = [&rc](const std::string& key, const std::string& text, Source src) {
    const ConfigKey* k = find_key(key);
    if (!k) throw ConfigError("unknown config key '" + key + "'");
    k->set(rc, text);
    rc.source[key] = src;
  };
  auto text_of = [](const nlohmann::ordered_json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
  };

  if (const char* root = std::getenv("AMUSE_OUT_ROOT"); root && *root) {
    rc.out_dir = root;
    rc.source["out_dir"] = Source::env;
  }
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
    const bool manifest = j.contains("config") && j["config"].is_object();
    const auto& body = manifest ? j["config"] : j;
    for (const auto& [key, val] : body.items()) {
      if (manifest) {
        if (!val.is_object() || !val.contains("value")) throw ConfigError("manifest entry '" + key + "' has no value");
        apply(key, text_of(val["value"]), Source::file);
      } else {
        apply(key, text_of(val), Source::file);
      }
    }
  }
  for (const auto& [key, text] : flags) apply(key, text, Source::flag);
  validate_run_config(rc);
  rc.train.opt.total_steps = rc.train.steps;
  return rc;
}

/// Loads the dataset a config names.
inline Dataset load_dataset(const RunConfig& rc) {
  Dataset ds;
  if (rc.dataset == "idx") {
    ds = load_idx(rc.idx_images, rc.idx_labels);
    if (rc.subset < ds.size()) ds = take_first(ds, rc.subset);
  } else {
    ds = synthetic_gaussian(rc.data_seed, rc.synth_n, rc.synth_d, rc.synth_k, rc.synth_separation);
  }
  return ds;
}

/// Config with dataset-derived model dimensions filled in.
inline TrainConfig materialize(const RunConfig& rc, const Dataset& ds) {
  TrainConfig tc = rc.train;
  tc.model.input_dim = ds.dim();
  tc.model.output_dim = ds.num_classes;
  tc.opt.total_steps = tc.steps;
  return tc;
}

/// Manifest: every key with its value and provenance, plus run metadata.
inline nlohmann::ordered_json manifest_json(const RunConfig& rc, const std::string& subcommand) {
  nlohmann::ordered_json m;
  m["tool"] = "amuse";
  m["version"] = kToolVersion;
  m["subcommand"] = subcommand;
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  for (const auto& k : config_keys()) {
    const auto it = rc.source.find(k.name);
    cfg[k.name] = {{"value", k.get(rc)}, {"source", to_string(it == rc.source.end() ? Source::default_value : it->second)}};
  }
  m["config"] = cfg;
  return m;
}

}  // namespace amuse
