#include "percflow/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "percflow/csv.hpp"
#include "percflow/errors.hpp"

namespace percflow {

namespace {

int line_of(const YAML::Node& n) {
  const YAML::Mark m = n.Mark();
  return m.line;  // ConfigError reports it 1-based
}

void require_map(const YAML::Node& n, const std::string& where) {
  if (!n.IsMap()) throw ConfigError(where + " must be a mapping", line_of(n));
}

void check_keys(const YAML::Node& n, const std::string& where,
                std::initializer_list<const char*> allowed) {
  require_map(n, where);
  std::set<std::string> seen;
  for (const auto& kv : n) {
    const auto key = kv.first.as<std::string>();
    if (!seen.insert(key).second) {
      throw ConfigError("duplicate key '" + key + "' in " + where, line_of(kv.first));
    }
    const bool ok = std::any_of(allowed.begin(), allowed.end(),
                                [&](const char* a) { return key == a; });
    if (!ok) {
      std::string valid;
      for (const char* a : allowed) valid += (valid.empty() ? "" : ", ") + std::string(a);
      throw ConfigError("unknown key '" + key + "' in " + where + " (valid: " +
                            valid + ")",
                        line_of(kv.first));
    }
  }
}

template <typename T>
void read(const YAML::Node& parent, const char* key, T& out,
          const std::string& where) {
  const YAML::Node n = parent[key];
  if (!n) return;
  try {
    out = n.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(where + "." + key + " has the wrong type", line_of(n));
  }
}

// Runs `fn`, attaching the node's line to library validation errors.
template <typename Fn>
void at_line(const YAML::Node& n, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what(), line_of(n));
  }
}

GmmDataset parse_dataset(const YAML::Node& n) {
  check_keys(n, "dataset", {"dim", "modes", "conditions"});
  GmmDataset ds;
  read(n, "dim", ds.dim, "dataset");
  const YAML::Node modes = n["modes"];
  const YAML::Node conds = n["conditions"];
  if (!modes || !modes.IsSequence()) {
    throw ConfigError("dataset.modes must be a list", line_of(modes ? modes : n));
  }
  if (!conds || !conds.IsSequence()) {
    throw ConfigError("dataset.conditions must be a list", line_of(conds ? conds : n));
  }
  for (const auto& m : modes) {
    check_keys(m, "dataset.modes entry", {"mean", "weight", "std"});
    GmmMode mode;
    read(m, "mean", mode.mean, "dataset.modes");
    read(m, "weight", mode.weight, "dataset.modes");
    read(m, "std", mode.std, "dataset.modes");
    ds.modes.push_back(mode);
  }
  for (const auto& c : conds) {
    check_keys(c, "dataset.conditions entry", {"name", "modes"});
    ConditionSpec cs;
    read(c, "name", cs.name, "dataset.conditions");
    read(c, "modes", cs.modes, "dataset.conditions");
    ds.conditions.push_back(cs);
  }
  at_line(n, [&] { ds.validate(); });
  return ds;
}

ScheduleSpec parse_schedule(const YAML::Node& n) {
  check_keys(n, "schedule",
             {"num_steps", "sigma_kind", "eta", "delta", "delta_min", "sigma_time_cap"});
  ScheduleSpec s;
  read(n, "num_steps", s.num_steps, "schedule");
  if (n["sigma_kind"]) {
    at_line(n["sigma_kind"], [&] {
      s.sigma_kind = sigma_kind_from_string(n["sigma_kind"].as<std::string>());
    });
  }
  read(n, "eta", s.eta, "schedule");
  read(n, "delta", s.delta, "schedule");
  read(n, "delta_min", s.delta_min, "schedule");
  read(n, "sigma_time_cap", s.sigma_time_cap, "schedule");
  at_line(n, [&] { NoiseSchedule check(s); });
  return s;
}

ModelSpec parse_model(const YAML::Node& n) {
  check_keys(n, "model", {"hidden", "activation", "time_frequencies"});
  ModelSpec m;
  read(n, "hidden", m.hidden, "model");
  if (n["activation"]) {
    at_line(n["activation"], [&] {
      m.activation = activation_from_string(n["activation"].as<std::string>());
    });
  }
  read(n, "time_frequencies", m.time_frequencies, "model");
  if (m.hidden.empty() || std::any_of(m.hidden.begin(), m.hidden.end(),
                                      [](int h) { return h <= 0; })) {
    throw ConfigError("model.hidden must list positive sizes", line_of(n));
  }
  if (m.time_frequencies < 0) {
    throw ConfigError("model.time_frequencies must be >= 0", line_of(n));
  }
  return m;
}

PretrainConfig parse_pretrain(const YAML::Node& n) {
  check_keys(n, "pretrain",
             {"batch_size", "num_steps", "eval_every", "learning_rate", "s_min", "s_max"});
  PretrainConfig p;
  read(n, "batch_size", p.batch_size, "pretrain");
  read(n, "num_steps", p.num_steps, "pretrain");
  read(n, "eval_every", p.eval_every, "pretrain");
  read(n, "learning_rate", p.learning_rate, "pretrain");
  read(n, "s_min", p.s_min, "pretrain");
  read(n, "s_max", p.s_max, "pretrain");
  at_line(n, [&] { p.validate(); });
  return p;
}

MapSpec parse_map(const YAML::Node& n) {
  check_keys(n, "perceptual_maps entry",
             {"id", "kind", "matrix", "hidden", "out_dim", "seed", "gain", "bias_scale"});
  MapSpec m;
  read(n, "id", m.id, "perceptual_maps");
  if (!n["kind"]) throw ConfigError("perceptual map '" + m.id + "' has no kind", line_of(n));
  at_line(n["kind"], [&] { m.kind = map_kind_from_string(n["kind"].as<std::string>()); });
  read(n, "matrix", m.matrix, "perceptual_maps");
  read(n, "hidden", m.hidden, "perceptual_maps");
  read(n, "out_dim", m.out_dim, "perceptual_maps");
  read(n, "seed", m.seed, "perceptual_maps");
  read(n, "gain", m.gain, "perceptual_maps");
  read(n, "bias_scale", m.bias_scale, "perceptual_maps");
  return m;
}

RewardSpec parse_reward(const YAML::Node& n, const std::string& where) {
  check_keys(n, where, {"kind", "centers", "scale", "weights"});
  RewardSpec r;
  if (!n["kind"]) throw ConfigError(where + " has no kind", line_of(n));
  at_line(n["kind"], [&] { r.kind = reward_kind_from_string(n["kind"].as<std::string>()); });
  read(n, "centers", r.centers, where);
  read(n, "scale", r.scale, where);
  read(n, "weights", r.weights, where);
  return r;
}

RegularizerSpec parse_regularizer_node(const YAML::Node& n) {
  check_keys(n, "regularizer",
             {"kind", "clip", "weight", "space", "eps_low", "eps_high", "rate",
              "beta", "lambda", "map"});
  if (!n["kind"]) throw ConfigError("regularizer has no kind", line_of(n));
  // Reuse the command-line grammar so both entry points accept the same keys.
  std::string text = n["kind"].as<std::string>();
  std::string opts;
  for (const auto& kv : n) {
    const auto key = kv.first.as<std::string>();
    if (key == "kind") continue;
    opts += (opts.empty() ? "" : ",") + key + "=" + kv.second.as<std::string>();
  }
  if (!opts.empty()) text += ":" + opts;
  RegularizerSpec spec;
  at_line(n, [&] { spec = parse_regularizer(text); });
  return spec;
}

RlhfSection parse_rlhf(const YAML::Node& n) {
  check_keys(n, "rlhf",
             {"group_size", "groups_per_step", "num_updates", "inner_updates",
              "learning_rate", "conditions", "checkpoint_every", "coverage_radius",
              "coverage_share", "metrics_map"});
  RlhfSection r;
  read(n, "group_size", r.group_size, "rlhf");
  read(n, "groups_per_step", r.groups_per_step, "rlhf");
  read(n, "num_updates", r.num_updates, "rlhf");
  read(n, "inner_updates", r.inner_updates, "rlhf");
  read(n, "learning_rate", r.learning_rate, "rlhf");
  read(n, "conditions", r.conditions, "rlhf");
  read(n, "checkpoint_every", r.checkpoint_every, "rlhf");
  read(n, "coverage_radius", r.coverage_radius, "rlhf");
  read(n, "coverage_share", r.coverage_share, "rlhf");
  read(n, "metrics_map", r.metrics_map, "rlhf");
  return r;
}

}  // namespace

const MapSpec* ExperimentConfig::find_map(const std::string& id) const {
  for (const auto& m : perceptual_maps) {
    if (m.id == id) return &m;
  }
  return nullptr;
}

void ExperimentConfig::validate() const {
  dataset.validate();
  NoiseSchedule check(schedule);
  pretrain.validate();
  regularizer.validate();
  std::set<std::string> ids;
  for (const auto& m : perceptual_maps) {
    if (m.id.empty()) throw ConfigError("perceptual map without an id");
    if (!ids.insert(m.id).second) throw ConfigError("duplicate perceptual map id '" + m.id + "'");
    PerceptualMap::build(m, dataset.dim);
  }
  for (const auto& [name, spec] : landscape) {
    dataset.condition_id(name);
    spec.validate(dataset.dim);
  }
  for (const auto& c : rlhf.conditions) dataset.condition_id(c);
  const bool needs_map = regularizer.kind == RegularizerKind::kPec ||
                         regularizer.kind == RegularizerKind::kPcvae ||
                         (regularizer.kind == RegularizerKind::kEntropyReg &&
                          regularizer.entropy_space == EntropySpace::kPerceptual);
  if (needs_map && regularizer.map_id != "identity" && !find_map(regularizer.map_id)) {
    throw ConfigError("regularizer references unknown map '" + regularizer.map_id + "'");
  }
  if (rlhf.metrics_map != "identity" && !find_map(rlhf.metrics_map)) {
    throw ConfigError("rlhf.metrics_map references unknown map '" + rlhf.metrics_map + "'");
  }
  if (rlhf.group_size < 2) throw ConfigError("rlhf.group_size must be at least 2");
  if (rlhf.groups_per_step < 1 || rlhf.num_updates < 0 || rlhf.inner_updates < 1 ||
      rlhf.checkpoint_every < 1 || !(rlhf.learning_rate > 0.0)) {
    throw ConfigError("rlhf counts and learning_rate must be positive");
  }
  if (run.eval_samples < 1) throw ConfigError("run.eval_samples must be positive");
}

ExperimentConfig default_config() {
  ExperimentConfig cfg;
  cfg.dataset = GmmDataset::default_dataset();
  MapSpec mlp;
  mlp.id = "mlp";
  mlp.kind = MapKind::kFrozenMlp;
  MapSpec proj;
  proj.id = "proj";
  proj.kind = MapKind::kLinear;
  proj.matrix = {{1.0, 0.0}};
  cfg.perceptual_maps = {mlp, proj};
  cfg.landscape["portrait"] =
      RewardSpec{RewardKind::kTwinPeaks, {{-3.0, 0.0}, {3.0, 0.0}}, 0.5, {}};
  return cfg;
}

ExperimentConfig parse_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(e.msg, e.mark.line);
  }
  if (!root || root.IsNull()) throw ConfigError("empty configuration");
  check_keys(root, "the top level",
             {"run", "dataset", "schedule", "model", "pretrain", "perceptual_maps",
              "landscape", "regularizer", "rlhf"});
  if (!root["run"]) throw ConfigError("missing run section");
  if (!root["dataset"]) throw ConfigError("missing dataset section");

  ExperimentConfig cfg;
  const YAML::Node run = root["run"];
  check_keys(run, "run", {"name", "seed", "output_dir", "checkpoint", "eval_samples"});
  read(run, "name", cfg.run.name, "run");
  read(run, "seed", cfg.run.seed, "run");
  read(run, "output_dir", cfg.run.output_dir, "run");
  read(run, "checkpoint", cfg.run.checkpoint, "run");
  read(run, "eval_samples", cfg.run.eval_samples, "run");

  cfg.dataset = parse_dataset(root["dataset"]);
  if (root["schedule"]) cfg.schedule = parse_schedule(root["schedule"]);
  if (root["model"]) cfg.model = parse_model(root["model"]);
  if (root["pretrain"]) cfg.pretrain = parse_pretrain(root["pretrain"]);
  cfg.pretrain.seed = cfg.run.seed;
  if (const YAML::Node maps = root["perceptual_maps"]) {
    if (!maps.IsSequence()) throw ConfigError("perceptual_maps must be a list", line_of(maps));
    for (const auto& m : maps) {
      cfg.perceptual_maps.push_back(parse_map(m));
      at_line(m, [&] { PerceptualMap::build(cfg.perceptual_maps.back(), cfg.dataset.dim); });
    }
  }
  if (const YAML::Node land = root["landscape"]) {
    require_map(land, "landscape");
    for (const auto& kv : land) {
      const auto name = kv.first.as<std::string>();
      at_line(kv.first, [&] { cfg.dataset.condition_id(name); });
      cfg.landscape[name] = parse_reward(kv.second, "landscape." + name);
      at_line(kv.second, [&] { cfg.landscape[name].validate(cfg.dataset.dim); });
    }
  }
  if (root["regularizer"]) cfg.regularizer = parse_regularizer_node(root["regularizer"]);
  if (root["rlhf"]) cfg.rlhf = parse_rlhf(root["rlhf"]);
  try {
    cfg.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

namespace {

// Doubles go out in shortest round-trip form so parse(emit(c)) == c.
void num(YAML::Emitter& out, double v) { out << format_double(v); }

void nums(YAML::Emitter& out, const std::vector<double>& v) {
  out << YAML::Flow << YAML::BeginSeq;
  for (double x : v) num(out, x);
  out << YAML::EndSeq;
}

void matrix(YAML::Emitter& out, const std::vector<std::vector<double>>& m) {
  out << YAML::Flow << YAML::BeginSeq;
  for (const auto& row : m) nums(out, row);
  out << YAML::EndSeq;
}

}  // namespace

std::string emit_config(const ExperimentConfig& cfg) {
  YAML::Emitter out;
  out << YAML::BeginMap;

  out << YAML::Key << "run" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "name" << YAML::Value << YAML::DoubleQuoted << cfg.run.name;
  out << YAML::Key << "seed" << YAML::Value << cfg.run.seed;
  out << YAML::Key << "output_dir" << YAML::Value << YAML::DoubleQuoted << cfg.run.output_dir;
  out << YAML::Key << "checkpoint" << YAML::Value << YAML::DoubleQuoted << cfg.run.checkpoint;
  out << YAML::Key << "eval_samples" << YAML::Value << cfg.run.eval_samples;
  out << YAML::EndMap;

  out << YAML::Key << "dataset" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "dim" << YAML::Value << cfg.dataset.dim;
  out << YAML::Key << "modes" << YAML::Value << YAML::BeginSeq;
  for (const auto& m : cfg.dataset.modes) {
    out << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "mean" << YAML::Value;
    nums(out, m.mean);
    out << YAML::Key << "weight" << YAML::Value;
    num(out, m.weight);
    out << YAML::Key << "std" << YAML::Value;
    num(out, m.std);
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "conditions" << YAML::Value << YAML::BeginSeq;
  for (const auto& c : cfg.dataset.conditions) {
    out << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "name" << YAML::Value << YAML::DoubleQuoted << c.name;
    out << YAML::Key << "modes" << YAML::Value << YAML::Flow << c.modes;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::EndMap;

  const auto& s = cfg.schedule;
  out << YAML::Key << "schedule" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "num_steps" << YAML::Value << s.num_steps;
  out << YAML::Key << "sigma_kind" << YAML::Value << to_string(s.sigma_kind);
  out << YAML::Key << "eta" << YAML::Value;
  num(out, s.eta);
  out << YAML::Key << "delta" << YAML::Value;
  num(out, s.delta);
  out << YAML::Key << "delta_min" << YAML::Value;
  num(out, s.delta_min);
  out << YAML::Key << "sigma_time_cap" << YAML::Value;
  num(out, s.sigma_time_cap);
  out << YAML::EndMap;

  out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "hidden" << YAML::Value << YAML::Flow << cfg.model.hidden;
  out << YAML::Key << "activation" << YAML::Value << to_string(cfg.model.activation);
  out << YAML::Key << "time_frequencies" << YAML::Value << cfg.model.time_frequencies;
  out << YAML::EndMap;

  const auto& p = cfg.pretrain;
  out << YAML::Key << "pretrain" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "batch_size" << YAML::Value << p.batch_size;
  out << YAML::Key << "num_steps" << YAML::Value << p.num_steps;
  out << YAML::Key << "eval_every" << YAML::Value << p.eval_every;
  out << YAML::Key << "learning_rate" << YAML::Value;
  num(out, p.learning_rate);
  out << YAML::Key << "s_min" << YAML::Value;
  num(out, p.s_min);
  out << YAML::Key << "s_max" << YAML::Value;
  num(out, p.s_max);
  out << YAML::EndMap;

  out << YAML::Key << "perceptual_maps" << YAML::Value << YAML::BeginSeq;
  for (const auto& m : cfg.perceptual_maps) {
    out << YAML::BeginMap;
    out << YAML::Key << "id" << YAML::Value << YAML::DoubleQuoted << m.id;
    out << YAML::Key << "kind" << YAML::Value << to_string(m.kind);
    if (m.kind == MapKind::kLinear) {
      out << YAML::Key << "matrix" << YAML::Value;
      matrix(out, m.matrix);
    }
    if (m.kind == MapKind::kFrozenMlp) {
      out << YAML::Key << "hidden" << YAML::Value << YAML::Flow << m.hidden;
      out << YAML::Key << "out_dim" << YAML::Value << m.out_dim;
      out << YAML::Key << "seed" << YAML::Value << m.seed;
      out << YAML::Key << "gain" << YAML::Value;
      num(out, m.gain);
      out << YAML::Key << "bias_scale" << YAML::Value;
      num(out, m.bias_scale);
    }
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;

  out << YAML::Key << "landscape" << YAML::Value << YAML::BeginMap;
  for (const auto& [name, r] : cfg.landscape) {
    out << YAML::Key << name << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "kind" << YAML::Value << to_string(r.kind);
    if (r.kind == RewardKind::kLinear) {
      out << YAML::Key << "weights" << YAML::Value;
      nums(out, r.weights);
    } else {
      out << YAML::Key << "centers" << YAML::Value;
      matrix(out, r.centers);
      out << YAML::Key << "scale" << YAML::Value;
      num(out, r.scale);
    }
    out << YAML::EndMap;
  }
  out << YAML::EndMap;

  const auto& g = cfg.regularizer;
  out << YAML::Key << "regularizer" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "kind" << YAML::Value << to_string(g.kind);
  out << YAML::Key << "clip" << YAML::Value;
  num(out, g.clip_eps);
  switch (g.kind) {
    case RegularizerKind::kNone: break;
    case RegularizerKind::kKlRef:
      out << YAML::Key << "weight" << YAML::Value;
      num(out, g.kl_weight);
      break;
    case RegularizerKind::kEntropyReg:
      out << YAML::Key << "space" << YAML::Value << to_string(g.entropy_space);
      out << YAML::Key << "weight" << YAML::Value;
      num(out, g.entropy_weight);
      out << YAML::Key << "map" << YAML::Value << YAML::DoubleQuoted << g.map_id;
      break;
    case RegularizerKind::kClipHigher:
      out << YAML::Key << "eps_low" << YAML::Value;
      num(out, g.eps_low);
      out << YAML::Key << "eps_high" << YAML::Value;
      num(out, g.eps_high);
      break;
    case RegularizerKind::kClipCov:
      out << YAML::Key << "rate" << YAML::Value;
      num(out, g.rate);
      break;
    case RegularizerKind::kKlCov:
      out << YAML::Key << "rate" << YAML::Value;
      num(out, g.rate);
      out << YAML::Key << "beta" << YAML::Value;
      num(out, g.beta);
      break;
    case RegularizerKind::kPec:
    case RegularizerKind::kPcvae:
      out << YAML::Key << "lambda" << YAML::Value;
      num(out, g.lambda);
      out << YAML::Key << "map" << YAML::Value << YAML::DoubleQuoted << g.map_id;
      break;
  }
  out << YAML::EndMap;

  const auto& r = cfg.rlhf;
  out << YAML::Key << "rlhf" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "group_size" << YAML::Value << r.group_size;
  out << YAML::Key << "groups_per_step" << YAML::Value << r.groups_per_step;
  out << YAML::Key << "num_updates" << YAML::Value << r.num_updates;
  out << YAML::Key << "inner_updates" << YAML::Value << r.inner_updates;
  out << YAML::Key << "learning_rate" << YAML::Value;
  num(out, r.learning_rate);
  out << YAML::Key << "conditions" << YAML::Value << YAML::Flow << r.conditions;
  out << YAML::Key << "checkpoint_every" << YAML::Value << r.checkpoint_every;
  out << YAML::Key << "coverage_radius" << YAML::Value;
  num(out, r.coverage_radius);
  out << YAML::Key << "coverage_share" << YAML::Value;
  num(out, r.coverage_share);
  out << YAML::Key << "metrics_map" << YAML::Value << YAML::DoubleQuoted << r.metrics_map;
  out << YAML::EndMap;

  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

void apply_seed_override(ExperimentConfig& cfg) {
  const char* env = std::getenv("PERCFLOW_SEED");
  if (env == nullptr || *env == '\0') return;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (end == env || *end != '\0') {
    throw ConfigError(std::string("PERCFLOW_SEED is not an unsigned integer: ") + env);
  }
  cfg.run.seed = v;
  cfg.pretrain.seed = v;
}

RewardLandscape build_landscape(const ExperimentConfig& cfg) {
  RewardLandscape land;
  for (const auto& [name, spec] : cfg.landscape) {
    land.by_condition[cfg.dataset.condition_id(name)] = spec;
  }
  return land;
}

std::vector<PerceptualMap> build_maps(const ExperimentConfig& cfg) {
  std::vector<PerceptualMap> maps;
  for (const auto& m : cfg.perceptual_maps) {
    maps.push_back(PerceptualMap::build(m, cfg.dataset.dim));
  }
  return maps;
}

}  // namespace percflow
