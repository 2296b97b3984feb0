#include "percflow/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <sstream>

#include "percflow/checkpoint.hpp"
#include "percflow/csv.hpp"
#include "percflow/errors.hpp"
#include "percflow/flow.hpp"
#include "percflow/perceptual.hpp"
#include "percflow/pretrain.hpp"
#include "percflow/rlhf.hpp"
#include "percflow/svg.hpp"

namespace fs = std::filesystem;

namespace percflow {

std::string utc_timestamp() {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

RunManifest RunManifest::begin(const RunLayout& layout, const std::string& command,
                               const ExperimentConfig& cfg) {
  RunManifest m;
  m.layout_ = layout;
  nlohmann::json maps = nlohmann::json::array();
  for (const auto& map : build_maps(cfg)) maps.push_back(map.to_json());
  m.json_ = {{"format", "percflow-run"},
             {"version", kVersion},
             {"command", command},
             {"name", cfg.run.name},
             {"seed", cfg.run.seed},
             {"config", emit_config(cfg)},
             {"started_at", utc_timestamp()},
             {"finished_at", nullptr},
             {"status", {{"state", "running"}}},
             {"checkpoints", nlohmann::json::array()},
             {"outputs", nlohmann::json::array()},
             {"perceptual_maps", maps}};
  m.save();
  return m;
}

RunManifest RunManifest::load(const RunLayout& layout) {
  const fs::path path = layout.manifest();
  std::ifstream in(path);
  if (!in) throw IoError("missing file " + path.string());
  RunManifest m;
  m.layout_ = layout;
  try {
    m.json_ = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupted manifest " + path.string() + ": " + e.what());
  }
  if (!m.json_.is_object() || m.json_.value("format", "") != "percflow-run") {
    throw IoError(path.string() + " is not a run manifest");
  }
  return m;
}

void RunManifest::add_checkpoint(int step, const fs::path& rel) {
  json_["checkpoints"].push_back({{"step", step},
                                  {"path", rel.generic_string()},
                                  {"digest", file_digest(layout_.dir / rel)}});
  add_output(rel, "checkpoint");
}

void RunManifest::add_output(const fs::path& rel, const std::string& kind) {
  const std::string p = rel.generic_string();
  for (const auto& o : json_["outputs"]) {
    if (o["path"] == p) return;
  }
  json_["outputs"].push_back({{"path", p}, {"kind", kind}});
}

void RunManifest::complete() {
  json_["status"] = {{"state", "completed"}};
  json_["finished_at"] = utc_timestamp();
}

void RunManifest::abort(const std::string& reason) {
  json_["status"] = {{"state", "aborted"}, {"reason", reason}};
  json_["finished_at"] = utc_timestamp();
}

void RunManifest::save() const {
  write_file_atomic(layout_.manifest(), json_.dump(2) + "\n");
}

ExperimentConfig RunManifest::config() const {
  return parse_config(json_.at("config").get<std::string>());
}

bool RunManifest::completed() const {
  return json_["status"].value("state", "") == "completed";
}

fs::path resolve_checkpoint(const std::string& ref) {
  if (ref.empty()) throw ConfigError("run.checkpoint is required for rlhf");
  fs::path p(ref);
  if (fs::is_directory(p)) p = RunLayout{p}.final_checkpoint();
  if (!fs::exists(p)) throw ConfigError("checkpoint " + p.string() + " does not exist");
  return p;
}

namespace {

RunLayout prepare_dir(const ExperimentConfig& cfg, const RunOptions& opts) {
  RunLayout layout{fs::path(cfg.run.output_dir)};
  if (fs::exists(layout.dir) && !fs::is_empty(layout.dir)) {
    if (!opts.force) {
      throw ConfigError("output directory " + layout.dir.string() +
                        " is not empty (use --force to replace a previous run)");
    }
    if (!fs::exists(layout.manifest())) {
      throw ConfigError("refusing to replace " + layout.dir.string() +
                        ": it does not hold a run");
    }
    fs::remove_all(layout.dir);
  }
  fs::create_directories(layout.checkpoints());
  fs::create_directories(layout.plots());
  return layout;
}

std::string step_name(int step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%04d.json", step);
  return buf;
}

const PerceptualMap* find_built(const std::vector<PerceptualMap>& maps,
                                const PerceptualMap& identity, const std::string& id) {
  if (id == "identity") return &identity;
  for (const auto& m : maps) {
    if (m.id() == id) return &m;
  }
  throw ConfigError("unknown perceptual map '" + id + "'");
}

bool uses_map(const RegularizerSpec& spec) {
  return spec.kind == RegularizerKind::kPec || spec.kind == RegularizerKind::kPcvae ||
         (spec.kind == RegularizerKind::kEntropyReg &&
          spec.entropy_space == EntropySpace::kPerceptual);
}

template <typename Body>
void guarded(RunManifest& manifest, Body&& body) {
  try {
    body();
  } catch (const DivergenceError& e) {
    manifest.abort(e.what());
    manifest.save();
    throw;
  } catch (const std::exception& e) {
    manifest.abort(std::string("error: ") + e.what());
    manifest.save();
    throw;
  }
}

}  // namespace

fs::path run_pretrain(const ExperimentConfig& cfg_in, const RunOptions& opts) {
  ExperimentConfig cfg = cfg_in;
  cfg.pretrain.seed = cfg.run.seed;
  cfg.validate();
  const RunLayout layout = prepare_dir(cfg, opts);
  RunManifest manifest = RunManifest::begin(layout, "pretrain", cfg);
  guarded(manifest, [&] {
    Rng init = make_stream(cfg.run.seed, {1});
    VelocityModel model =
        VelocityModel::create(cfg.dataset.dim, cfg.dataset.num_conditions(), cfg.model, init);
    std::ofstream metrics(layout.metrics());
    metrics << "step,loss\n";
    manifest.add_output("metrics.csv", "loss_curve");
    pretrain_loop(model, cfg.dataset, cfg.pretrain, [&](const LossPoint& p) {
      metrics << p.step << ',' << format_double(p.loss) << '\n';
    });
    metrics.close();
    save_checkpoint(layout.final_checkpoint(), model, cfg.dataset.condition_names());
    manifest.add_checkpoint(cfg.pretrain.num_steps, "checkpoints/final.json");
  });
  manifest.complete();
  manifest.save();
  return layout.dir;
}

fs::path run_rlhf(const ExperimentConfig& cfg_in, const RunOptions& opts) {
  ExperimentConfig cfg = cfg_in;
  cfg.validate();
  const fs::path source = resolve_checkpoint(cfg.run.checkpoint);
  std::vector<std::string> names;
  VelocityModel model = load_checkpoint(source, &names);
  if (names != cfg.dataset.condition_names() || model.dim != cfg.dataset.dim) {
    throw ConfigError("checkpoint " + source.string() +
                      " was trained on a different dataset (conditions or dimension differ)");
  }
  if (cfg.landscape.empty()) throw ConfigError("rlhf needs a landscape section");

  const RunLayout layout = prepare_dir(cfg, opts);
  RunManifest manifest = RunManifest::begin(layout, "rlhf", cfg);
  manifest.data()["source_checkpoint"] = {{"path", source.string()},
                                          {"digest", file_digest(source)}};
  manifest.data()["regularizer"] = format_regularizer(cfg.regularizer);
  manifest.save();

  guarded(manifest, [&] {
    const NoiseSchedule sch(cfg.schedule);
    const std::vector<PerceptualMap> maps = build_maps(cfg);
    const PerceptualMap identity = PerceptualMap::identity(cfg.dataset.dim);
    RlhfMaps rm;
    if (uses_map(cfg.regularizer)) {
      rm.regularizer = find_built(maps, identity, cfg.regularizer.map_id);
    }
    rm.metrics = find_built(maps, identity, cfg.rlhf.metrics_map);

    RlhfOptions o;
    o.group_size = cfg.rlhf.group_size;
    o.groups_per_step = cfg.rlhf.groups_per_step;
    o.num_updates = cfg.rlhf.num_updates;
    o.inner_updates = cfg.rlhf.inner_updates;
    o.learning_rate = cfg.rlhf.learning_rate;
    o.conditions.clear();
    for (const auto& c : cfg.rlhf.conditions) o.conditions.push_back(cfg.dataset.condition_id(c));
    o.checkpoint_every = cfg.rlhf.checkpoint_every;
    o.seed = cfg.run.seed;
    o.coverage = {cfg.rlhf.coverage_radius, cfg.rlhf.coverage_share};

    std::ofstream metrics(layout.metrics());
    metrics << "step,mean_raw_reward,std_raw_reward,mean_shaped_reward,clipped_frac,"
               "mean_ratio,analytic_entropy,perc_entropy,mode_coverage,vendi,p_adv_max,"
               "p_adv_min,cov_q10,cov_q50,cov_q90,ratio_warnings\n";
    manifest.add_output("metrics.csv", "metrics");
    RlhfCallbacks cb;
    cb.on_stats = [&](const UpdateStats& s) {
      metrics << s.step;
      for (double v : {s.mean_raw_reward, s.std_raw_reward, s.mean_shaped_reward,
                       s.clipped_frac, s.mean_ratio, s.analytic_entropy, s.perc_entropy,
                       s.mode_coverage, s.vendi, s.p_adv_max, s.p_adv_min, s.cov_q10,
                       s.cov_q50, s.cov_q90}) {
        metrics << ',' << format_double(v);
      }
      metrics << ',' << s.ratio_warnings << '\n';
    };
    cb.on_checkpoint = [&](int step, const VelocityModel& m) {
      const fs::path rel = fs::path("checkpoints") / step_name(step);
      save_checkpoint(layout.dir / rel, m, names);
      manifest.add_checkpoint(step, rel);
      manifest.save();
    };
    rlhf_train(model, cfg.dataset, build_landscape(cfg), cfg.regularizer, sch, rm, o, cb);
    metrics.close();
    save_checkpoint(layout.final_checkpoint(), model, names);
    manifest.add_checkpoint(cfg.rlhf.num_updates, "checkpoints/final.json");
  });
  manifest.complete();
  manifest.save();
  return layout.dir;
}

std::vector<DiversityReport> run_eval(const fs::path& dir, int n_samples) {
  if (n_samples < 1) throw ValueError("--samples must be at least 1");
  const RunLayout layout{dir};
  RunManifest manifest = RunManifest::load(layout);
  if (!manifest.completed()) {
    throw IoError("run " + dir.string() + " did not complete; nothing to evaluate");
  }
  const ExperimentConfig cfg = manifest.config();
  std::vector<std::string> names;
  const VelocityModel model = load_checkpoint(layout.final_checkpoint(), &names);
  const NoiseSchedule sch(cfg.schedule);
  const CoverageOptions cov{cfg.rlhf.coverage_radius, cfg.rlhf.coverage_share};

  std::vector<PerceptualMap> spaces{PerceptualMap::identity(cfg.dataset.dim)};
  for (auto& m : build_maps(cfg)) spaces.push_back(std::move(m));

  std::ofstream samples(layout.samples());
  write_trajectory_csv_header(samples, cfg.dataset.dim);
  std::vector<DiversityReport> reports;
  for (const auto& space : spaces) {
    for (int c = 0; c < cfg.dataset.num_conditions(); ++c) {
      reports.push_back({space.id(), names[c], 0.0, 1.0, 0.0, n_samples});
    }
  }
  for (int c = 0; c < cfg.dataset.num_conditions(); ++c) {
    std::vector<int> conds(n_samples, c);
    std::vector<Rng> rngs;
    rngs.reserve(n_samples);
    for (int k = 0; k < n_samples; ++k) {
      rngs.push_back(make_stream(cfg.run.seed, {0xe7a1, static_cast<std::uint64_t>(c),
                                                static_cast<std::uint64_t>(k)}));
    }
    const auto trajs = rollout_batch(model, sch, conds, rngs);
    Eigen::MatrixXd x0(cfg.dataset.dim, n_samples);
    for (int k = 0; k < n_samples; ++k) {
      x0.col(k) = trajs[k].final_state;
      write_trajectory_csv(samples, cfg.run.name, names[c], trajs[k]);
    }
    const double coverage = mode_coverage(x0, cfg.dataset, c, cov);
    for (std::size_t s = 0; s < spaces.size(); ++s) {
      DiversityReport& r = reports[s * cfg.dataset.num_conditions() + c];
      const Eigen::MatrixXd z = spaces[s].apply_batch(x0);
      r.feature_variance = n_samples >= 2 ? feature_variance(z) : 0.0;
      r.vendi = vendi_score(z);
      r.mode_coverage = coverage;
    }
  }
  samples.close();
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : reports) arr.push_back(to_json(r));
  manifest.data()["diversity"] = arr;
  manifest.add_output("samples.csv", "samples");
  manifest.save();
  return reports;
}

FitResult run_fit(const fs::path& dir) {
  const RunLayout layout{dir};
  RunManifest manifest = RunManifest::load(layout);
  const CsvTable table = read_csv(layout.metrics());
  const std::vector<double> h = table.numeric_column("perc_entropy");
  const std::vector<double> r = table.numeric_column("mean_raw_reward");
  const FitResult fit = entropy_reward_fit(h, r);

  Series pts{"updates", h, r};
  Series curve{"R = -a exp(H) + b", {}, {}};
  const auto [lo, hi] = std::minmax_element(h.begin(), h.end());
  for (int k = 0; k <= 60; ++k) {
    const double x = *lo + (*hi - *lo) * k / 60.0;
    curve.x.push_back(x);
    curve.y.push_back(-fit.a * std::exp(x) + fit.b);
  }
  std::ostringstream title;
  title << "reward vs perceptual entropy (r^2 = " << format_double(std::round(fit.r_squared * 1e3) / 1e3)
        << ")";
  fs::create_directories(layout.plots());
  write_file_atomic(layout.plots() / "fit.svg",
                    scatter_svg({title.str(), "perceptual entropy H_perc", "mean raw reward"},
                                {pts}, {curve}));
  manifest.data()["fit"] = to_json(fit);
  manifest.add_output("plots/fit.svg", "plot");
  manifest.save();
  return fit;
}

std::vector<std::string> plot_kinds() {
  return {"reward", "reward-std", "entropy", "coverage", "scatter"};
}

fs::path run_plot(const std::vector<fs::path>& dirs, const std::string& kind) {
  if (dirs.empty()) throw ValueError("plot needs at least one run directory");
  const auto kinds = plot_kinds();
  if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) {
    std::string valid;
    for (const auto& k : kinds) valid += (valid.empty() ? "" : ", ") + k;
    throw ValueError("unknown plot kind '" + kind + "' (valid: " + valid + ")");
  }
  std::vector<RunManifest> manifests;
  for (const auto& d : dirs) manifests.push_back(RunManifest::load(RunLayout{d}));

  std::string svg;
  if (kind == "scatter") {
    std::vector<Series> pts;
    for (std::size_t i = 0; i < dirs.size(); ++i) {
      const CsvTable t = read_csv(RunLayout{dirs[i]}.samples());
      const std::size_t step_col = t.column("step");
      const std::size_t cond_col = t.column("condition");
      const std::size_t x_col = t.column("x_out0");
      const bool has_y = std::find(t.header.begin(), t.header.end(), "x_out1") != t.header.end();
      const std::size_t y_col = has_y ? t.column("x_out1") : 0;
      const std::string run = manifests[i].data().value("name", dirs[i].filename().string());
      std::map<std::string, std::size_t> by_cond;
      for (const auto& row : t.rows) {
        if (row.size() < t.header.size() || row[step_col] != "1") continue;
        auto [it, fresh] = by_cond.try_emplace(row[cond_col], pts.size());
        if (fresh) pts.push_back({run + " / " + row[cond_col], {}, {}});
        Series& s = pts[it->second];
        s.x.push_back(std::stod(row[x_col]));
        s.y.push_back(has_y ? std::stod(row[y_col]) : 0.0);
      }
    }
    svg = scatter_svg({"final samples x_0", "x_0[0]", "x_0[1]"}, pts);
  } else {
    const std::string column = kind == "reward"       ? "mean_raw_reward"
                               : kind == "reward-std" ? "std_raw_reward"
                               : kind == "entropy"    ? "perc_entropy"
                                                      : "mode_coverage";
    std::vector<Series> lines;
    for (std::size_t i = 0; i < dirs.size(); ++i) {
      const CsvTable t = read_csv(RunLayout{dirs[i]}.metrics());
      const std::string run = manifests[i].data().value("name", dirs[i].filename().string());
      const std::string reg = manifests[i].data().value("regularizer", "");
      lines.push_back({reg.empty() ? run : run + " (" + reg + ")", t.numeric_column("step"),
                       t.numeric_column(column)});
    }
    svg = line_plot_svg({column + " per update", "update", column}, lines);
  }
  const RunLayout first{dirs.front()};
  fs::create_directories(first.plots());
  const fs::path rel = fs::path("plots") / (kind + ".svg");
  write_file_atomic(first.dir / rel, svg);
  manifests.front().add_output(rel, "plot");
  manifests.front().save();
  return first.dir / rel;
}

}  // namespace percflow
