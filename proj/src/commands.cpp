#include "grm/commands.hpp"

#include "byteio.hpp"
#include "grm/checkpoint.hpp"
#include "grm/gradcheck.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace grm::cli {

namespace {

using nlohmann::json;

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json report_json(const MetricsReport& r) {
  json j;
  j["task"] = std::string(task_name(r.task));
  if (r.sr_accuracy) j["sr_accuracy"] = *r.sr_accuracy;
  if (r.knn_accuracy) j["knn_accuracy"] = *r.knn_accuracy;
  if (r.sr_accuracy) {
    j["probe_epochs"] = r.probe_epochs;
    j["probe_seed"] = r.probe_seed;
  }
  if (r.segmentation) {
    j["pixel_accuracy"] = r.segmentation->pixel_accuracy;
    j["iou"] = r.segmentation->iou;
    j["miou"] = r.segmentation->miou;
    json per = json::array();
    for (const auto& v : r.segmentation->class_iou) {
      per.push_back(v ? json(*v) : json(nullptr));
    }
    j["class_iou"] = per;
  }
  return j;
}

ExperimentConfig config_from_source(const std::filesystem::path& source) {
  if (source.extension() == ".json") {
    std::ifstream in(source);
    if (!in) throw ConfigError("", "cannot read manifest " + source.string());
    const json manifest = json::parse(in);
    ExperimentConfig cfg;
    for (const auto& [k, v] : manifest.at("config").items()) cfg.set(k, v.get<std::string>());
    return cfg;
  }
  return ExperimentConfig::from_file(source);
}

int config_failure(std::ostream& err, const ConfigError& e) {
  err << "config error";
  if (!e.key().empty()) err << " (key '" << e.key() << "')";
  err << ": " << e.what() << "\n";
  return 2;
}

}  // namespace

std::string metrics_json(const MetricsReport& report, int indent) {
  return report_json(report).dump(indent);
}

RunOutcome run_experiment(const ExperimentConfig& cfg, const ExperimentData& data,
                          const std::string& method) {
  const TrainConfig tc = cfg.train_config();
  const bool grpo = method == "grporm";
  if (!grpo && method != "baseline") {
    throw ConfigError("method", "unknown method '" + method + "'");
  }
  RunOutcome outcome;
  if (const auto* c = std::get_if<ClassData>(&data)) {
    const ClassDataset train = subset(c->dataset, c->split.train);
    const ClassDataset test = subset(c->dataset, c->split.test);
    const Architecture arch =
        cfg.architecture(static_cast<int>(c->dataset.dim()), c->dataset.classes);
    ModelParams init = init_params(tc.init_seed, arch);
    TrainResult r = grpo ? train_grporm(tc, std::move(init), train, test)
                         : train_baseline(tc, std::move(init), train, test);
    outcome.metrics = evaluate_classification(r.model, c->dataset, c->split,
                                              cfg.probe_config(),
                                              static_cast<int>(cfg.integer("knn_k")));
    outcome.model = std::move(r.model);
    outcome.log = std::move(r.log);
  } else {
    const auto& s = std::get<SegData>(data);
    const Architecture arch = cfg.architecture(static_cast<int>(s.train.dim()),
                                               s.train.classes, s.train.height,
                                               s.train.width);
    ModelParams init = init_params(tc.init_seed, arch);
    TrainResult r = grpo ? train_grporm(tc, std::move(init), s.train, s.test)
                         : train_baseline(tc, std::move(init), s.train, s.test);
    outcome.metrics = evaluate_segmentation(r.model, s.test);
    outcome.model = std::move(r.model);
    outcome.log = std::move(r.log);
  }
  return outcome;
}

int cmd_train(const std::filesystem::path& config,
              const std::vector<std::string>& overrides,
              const std::filesystem::path& run_dir, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg;
  try {
    cfg = ExperimentConfig::from_file(config);
    cfg.apply_overrides(overrides);
    cfg.train_config();
  } catch (const ConfigError& e) {
    return config_failure(err, e);
  }
  try {
    const std::string started = utc_now();
    const ExperimentData data = load_experiment_data(cfg);
    const RunOutcome r = run_experiment(cfg, data, cfg.get("method"));

    std::filesystem::create_directories(run_dir);
    json manifest;
    manifest["artifact_version"] = kArtifactVersion;
    manifest["config"] = cfg.values();
    manifest["seeds"] = {{"init_seed", cfg.integer("init_seed")},
                         {"data_seed", cfg.integer("data_seed")},
                         {"shuffle_seed", cfg.integer("shuffle_seed")},
                         {"split_seed", cfg.integer("split_seed")},
                         {"probe_seed", cfg.integer("probe_seed")}};
    manifest["started_at"] = started;
    manifest["finished_at"] = utc_now();
    manifest["dataset_fingerprint"] = fingerprint(data);
    manifest["final_metrics"] = report_json(r.metrics);
    json times = json::array();
    for (const auto& rec : r.log.records) times.push_back(rec.wall_time_s);
    manifest["epoch_wall_time_s"] = times;
    manifest["mean_epoch_time_s"] = r.log.mean_epoch_time();

    io::write_atomic(run_dir / "metrics.csv", metrics_csv(r.log));
    save_checkpoint(r.model, run_dir / "model.grmc");
    io::write_atomic(run_dir / "manifest.json", manifest.dump(2) + "\n");
    out << "run written to " << run_dir.string() << "\n" << metrics_json(r.metrics) << "\n";
    return 0;
  } catch (const ConfigError& e) {
    return config_failure(err, e);
  } catch (const std::exception& e) {
    err << "train failed: " << e.what() << "\n";
    return 1;
  }
}

int cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& source,
             const std::vector<std::string>& overrides, bool sr, bool knn,
             std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg;
  try {
    cfg = config_from_source(source);
    cfg.apply_overrides(overrides);
  } catch (const ConfigError& e) {
    return config_failure(err, e);
  } catch (const std::exception& e) {
    err << "eval failed: " << e.what() << "\n";
    return 1;
  }
  try {
    const ModelParams model = load_checkpoint(checkpoint);
    if (model.arch.task != cfg.task()) {
      throw std::invalid_argument("checkpoint task '" +
                                  std::string(task_name(model.arch.task)) +
                                  "' does not match config task '" + cfg.get("task") + "'");
    }
    const ExperimentData data = load_experiment_data(cfg);
    MetricsReport report;
    if (const auto* c = std::get_if<ClassData>(&data)) {
      report = evaluate_classification(model, c->dataset, c->split, cfg.probe_config(),
                                       static_cast<int>(cfg.integer("knn_k")), sr, knn);
    } else {
      report = evaluate_segmentation(model, std::get<SegData>(data).test);
    }
    out << metrics_json(report) << "\n";
    return 0;
  } catch (const ConfigError& e) {
    return config_failure(err, e);
  } catch (const std::exception& e) {
    err << "eval failed: " << e.what() << "\n";
    return 1;
  }
}

int cmd_ablate(const std::filesystem::path& config,
               const std::vector<std::string>& overrides,
               const std::filesystem::path& out_dir, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg;
  try {
    cfg = ExperimentConfig::from_file(config);
    cfg.apply_overrides(overrides);
    cfg.train_config();
    if (cfg.task() != TaskKind::Classification) {
      throw ConfigError("task", "ablate compares SR/kNN accuracy; use task = classification");
    }
  } catch (const ConfigError& e) {
    return config_failure(err, e);
  }

  ExperimentData data;
  try {
    data = load_experiment_data(cfg);
  } catch (const std::exception& e) {
    err << "ablate failed loading data: " << e.what() << "\n";
    return 1;
  }
  const std::string fp = fingerprint(data);

  struct Row {
    std::string mode;
    RunOutcome outcome;
  };
  std::vector<Row> rows;
  for (const std::string mode : {"accuracy-only", "eq5", "eq4", "baseline"}) {
    try {
      ExperimentConfig sub = cfg;
      if (mode != "baseline") sub.set("reward_mode", mode);
      rows.push_back({mode, run_experiment(sub, data, mode == "baseline" ? "baseline" : "grporm")});
    } catch (const std::exception& e) {
      err << "ablate failed in mode " << mode << ": " << e.what() << "\n";
      return 1;
    }
  }

  std::string csv = "mode,sr_accuracy,knn_accuracy,mean_epoch_time_s,data_fingerprint\n";
  std::ostringstream table;
  table << std::left << std::setw(16) << "mode" << std::setw(14) << "sr_accuracy"
        << std::setw(14) << "knn_accuracy" << "mean_epoch_time_s\n";
  std::vector<NamedRunLog> curves;
  for (const auto& row : rows) {
    const auto& m = row.outcome.metrics;
    char line[256];
    std::snprintf(line, sizeof line, "%s,%.17g,%.17g,%.17g,%s\n", row.mode.c_str(),
                  m.sr_accuracy.value_or(0.0), m.knn_accuracy.value_or(0.0),
                  row.outcome.log.mean_epoch_time(), fp.c_str());
    csv += line;
    table << std::left << std::setw(16) << row.mode << std::setw(14) << std::fixed
          << std::setprecision(4) << m.sr_accuracy.value_or(0.0) << std::setw(14)
          << m.knn_accuracy.value_or(0.0) << std::setprecision(6)
          << row.outcome.log.mean_epoch_time() << "\n";
    curves.push_back({row.mode, row.outcome.log});
  }
  try {
    std::filesystem::create_directories(out_dir);
    io::write_atomic(out_dir / "ablation.csv", csv);
    io::write_atomic(out_dir / "curves.csv", export_curves(curves));
  } catch (const std::exception& e) {
    err << "ablate failed writing results: " << e.what() << "\n";
    return 1;
  }
  out << table.str() << "data fingerprint " << fp << "\n";
  return 0;
}

int cmd_gradcheck(const std::optional<std::string>& fault, std::ostream& out,
                  std::ostream& err) {
  if (fault) {
    bool found = false;
    for (int k = 0; k <= static_cast<int>(ad::OpKind::SumAll); ++k) {
      const auto kind = static_cast<ad::OpKind>(k);
      if (ad::op_name(kind) == *fault) {
        ad::testing::inject_fault(kind);
        found = true;
      }
    }
    if (!found) {
      err << "unknown primitive '" << *fault << "' for --inject-fault\n";
      return 2;
    }
    out << "fault injected into " << *fault << " backward\n";
  }
  const double threshold = 1e-4;
  std::vector<GradCheckCase> cases;
  try {
    cases = run_gradcheck_suite(threshold);
  } catch (const std::exception& e) {
    ad::testing::clear_faults();
    err << "gradcheck failed: " << e.what() << "\n";
    return 1;
  }
  ad::testing::clear_faults();

  std::vector<std::string> failing;
  for (const auto& c : cases) {
    char line[160];
    std::snprintf(line, sizeof line, "%-36s %.3e  %s\n", c.name.c_str(), c.max_rel_error,
                  c.passed ? "ok" : "FAIL");
    out << line;
    if (!c.passed) failing.push_back(c.name);
  }
  out << cases.size() << " cases checked, threshold " << threshold << "\n";
  if (!failing.empty()) {
    err << "gradient check failed:";
    for (const auto& f : failing) err << " " << f;
    err << "\n";
    return 1;
  }
  return 0;
}

std::filesystem::path sidecar_path(const std::filesystem::path& out) {
  auto p = out;
  p += ".json";
  return p;
}

GenDataArgs read_sidecar(const std::filesystem::path& sidecar) {
  std::ifstream in(sidecar);
  if (!in) throw std::runtime_error("cannot read sidecar " + sidecar.string());
  const json j = json::parse(in);
  GenDataArgs a;
  a.kind = j.at("kind").get<std::string>();
  a.seed = j.at("seed").get<std::uint64_t>();
  a.classes = j.at("classes").get<int>();
  if (a.kind == "blobs") {
    a.n_per_class = j.at("n_per_class").get<int>();
    a.dim = j.at("dim").get<int>();
    a.spread = j.at("spread").get<double>();
  } else {
    a.height = j.at("height").get<int>();
    a.width = j.at("width").get<int>();
    a.images = j.at("images").get<int>();
    a.bg_fraction = j.at("bg_fraction").get<double>();
    a.noise = j.at("noise").get<double>();
  }
  return a;
}

int cmd_gen_data(const GenDataArgs& a, std::ostream& out, std::ostream& err) {
  if (a.kind != "blobs" && a.kind != "shapes-seg") {
    err << "unknown dataset kind '" << a.kind << "' (expected blobs or shapes-seg)\n";
    return 2;
  }
  if (a.out.empty()) {
    err << "gen-data needs an output path\n";
    return 2;
  }
  if (!a.force && (std::filesystem::exists(a.out) ||
                   std::filesystem::exists(sidecar_path(a.out)))) {
    err << a.out.string() << " already exists (use --force to overwrite)\n";
    return 1;
  }
  try {
    if (a.out.has_parent_path()) std::filesystem::create_directories(a.out.parent_path());
    json side;
    side["kind"] = a.kind;
    side["seed"] = a.seed;
    side["classes"] = a.classes;
    if (a.kind == "blobs") {
      const ClassDataset ds = gen_blobs(a.seed, a.classes, a.n_per_class, a.dim, a.spread);
      io::write_atomic(a.out, blobs_csv(ds));
      side["n_per_class"] = a.n_per_class;
      side["dim"] = a.dim;
      side["spread"] = a.spread;
      side["rows"] = ds.size();
      out << "wrote " << ds.size() << " rows to " << a.out.string() << "\n";
    } else {
      ShapesOptions o;
      o.classes = a.classes;
      o.height = a.height;
      o.width = a.width;
      o.images = a.images;
      o.bg_fraction = a.bg_fraction;
      o.noise = a.noise;
      const SegDataset ds = gen_shapes_seg(a.seed, o);
      save_grid(ds, a.out);
      side["height"] = a.height;
      side["width"] = a.width;
      side["images"] = a.images;
      side["bg_fraction"] = a.bg_fraction;
      side["noise"] = a.noise;
      side["measured_bg_fraction"] = ds.background_fraction();
      out << "wrote " << ds.images << " grids of " << ds.height << "x" << ds.width << " to "
          << a.out.string() << "\n";
    }
    io::write_atomic(sidecar_path(a.out), side.dump(2) + "\n");
    return 0;
  } catch (const std::exception& e) {
    err << "gen-data failed: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace grm::cli
