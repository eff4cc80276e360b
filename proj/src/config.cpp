#include "grm/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace grm {

namespace {

const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> d{
      {"task", "classification"},
      {"method", "grporm"},
      {"data", "blobs"},
      {"reward_mode", "eq4"},
      {"epochs", "100"},
      {"batch_size", "1024"},
      {"lr_start_base", "1e-3"},
      {"lr_end_base", "1e-5"},
      {"epsilon", "0.2"},
      {"beta", "0"},
      {"weight_decay", "0"},
      {"std_guard", "1e-8"},
      {"background_punishment", "true"},
      {"upsample", "1"},
      {"hidden", "256"},
      {"encoder", "64,32"},
      {"init_seed", "0"},
      {"data_seed", "0"},
      {"shuffle_seed", "0"},
      {"split_seed", "0"},
      {"probe_seed", "0"},
      {"classes", "10"},
      {"n_per_class", "200"},
      {"dim", "8"},
      {"spread", "0.15"},
      {"test_frac", "0.25"},
      {"grid_h", "16"},
      {"grid_w", "16"},
      {"n_train", "500"},
      {"n_test", "100"},
      {"bg_fraction", "0.8"},
      {"noise", "0.3"},
      {"data_path", ""},
      {"labels_path", ""},
      {"probe_epochs", "50"},
      {"probe_hidden", "256"},
      {"probe_batch_size", "64"},
      {"probe_lr_start_base", "1e-2"},
      {"probe_lr_end_base", "1e-4"},
      {"knn_k", "5"},
  };
  return d;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key, "config key '" + key + "': '" + v + "' is not a number");
  }
}

long parse_long(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long x = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key, "config key '" + key + "': '" + v + "' is not an integer");
  }
}

const std::vector<std::string> kIntegerKeys{
    "epochs", "batch_size", "upsample", "hidden", "init_seed", "data_seed",
    "shuffle_seed", "split_seed", "probe_seed", "classes", "n_per_class", "dim",
    "grid_h", "grid_w", "n_train", "n_test", "probe_epochs", "probe_hidden", "probe_batch_size", "knn_k"};
const std::vector<std::string> kNumberKeys{"lr_start_base", "lr_end_base", "epsilon", "beta",
                                           "weight_decay", "std_guard", "spread",
                                           "test_frac", "bg_fraction", "noise",
                                           "probe_lr_start_base", "probe_lr_end_base"};

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

std::vector<int> parse_widths(const std::string& v) {
  std::vector<int> out;
  if (v.empty() || v == "none") return out;
  std::istringstream in(v);
  std::string part;
  while (std::getline(in, part, ',')) {
    const long w = parse_long("encoder", trim(part));
    if (w <= 0) throw ConfigError("encoder", "config key 'encoder': widths must be positive");
    out.push_back(static_cast<int>(w));
  }
  return out;
}

}  // namespace

ExperimentConfig::ExperimentConfig() : values_(defaults()) {}

const std::vector<std::string>& ExperimentConfig::known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [key, _] : defaults()) k.push_back(key);
    return k;
  }();
  return keys;
}

void ExperimentConfig::set(const std::string& key, const std::string& raw) {
  if (!defaults().contains(key)) {
    throw ConfigError(key, "unknown config key '" + key + "'");
  }
  const std::string value = trim(raw);
  if (contains(kIntegerKeys, key)) {
    parse_long(key, value);
  } else if (contains(kNumberKeys, key)) {
    parse_double(key, value);
  } else if (key == "task") {
    try {
      parse_task(value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(key, e.what());
    }
  } else if (key == "reward_mode") {
    try {
      parse_reward_mode(value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(key, e.what());
    }
  } else if (key == "method" && value != "grporm" && value != "baseline") {
    throw ConfigError(key, "config key 'method': expected grporm or baseline");
  } else if (key == "data" && value != "blobs" && value != "shapes" && value != "csv" &&
             value != "idx" && value != "grid") {
    throw ConfigError(key, "config key 'data': expected blobs, shapes, csv, idx or grid");
  } else if (key == "background_punishment" && value != "true" && value != "false") {
    throw ConfigError(key, "config key 'background_punishment': expected true or false");
  } else if (key == "encoder") {
    parse_widths(value);
  }
  values_[key] = value;
  explicit_[key] = true;
  resolve_task_defaults();
}

void ExperimentConfig::resolve_task_defaults() {
  const bool seg = values_["task"] == "segmentation";
  auto fallback = [&](const char* key, const char* cls, const char* sgm) {
    if (!explicit_[key]) values_[key] = seg ? sgm : cls;
  };
  fallback("batch_size", "1024", "256");
  fallback("lr_start_base", "1e-3", "1e-5");
  fallback("lr_end_base", "1e-5", "1e-7");
  fallback("encoder", "64,32", "16");
}

ExperimentConfig ExperimentConfig::from_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("", "config line " + std::to_string(lineno) +
                                ": expected key = value, got '" + line + "'");
    }
    cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

void ExperimentConfig::apply_overrides(const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    std::string s = o;
    if (s.rfind("--", 0) == 0) s = s.substr(2);
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(s, "override '" + o + "' must look like --key=value");
    }
    set(s.substr(0, eq), s.substr(eq + 1));
  }
}

const std::string& ExperimentConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(key, "unknown config key '" + key + "'");
  return it->second;
}

double ExperimentConfig::number(const std::string& key) const {
  return parse_double(key, get(key));
}

long ExperimentConfig::integer(const std::string& key) const {
  return parse_long(key, get(key));
}

bool ExperimentConfig::flag(const std::string& key) const { return get(key) == "true"; }

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

TaskKind ExperimentConfig::task() const { return parse_task(get("task")); }

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t;
  t.task = task();
  t.epochs = static_cast<int>(integer("epochs"));
  t.batch_size = static_cast<int>(integer("batch_size"));
  t.lr_start_base = number("lr_start_base");
  t.lr_end_base = number("lr_end_base");
  t.epsilon = number("epsilon");
  t.beta = number("beta");
  t.weight_decay = number("weight_decay");
  t.reward_mode = parse_reward_mode(get("reward_mode"));
  t.std_guard = number("std_guard");
  t.background_punishment = flag("background_punishment");
  t.init_seed = static_cast<std::uint64_t>(integer("init_seed"));
  t.data_seed = static_cast<std::uint64_t>(integer("data_seed"));
  t.shuffle_seed = static_cast<std::uint64_t>(integer("shuffle_seed"));
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("", std::string("invalid training config: ") + e.what());
  }
  return t;
}

ProbeConfig ExperimentConfig::probe_config() const {
  ProbeConfig p;
  p.epochs = static_cast<int>(integer("probe_epochs"));
  p.hidden = static_cast<int>(integer("probe_hidden"));
  p.batch_size = static_cast<int>(integer("probe_batch_size"));
  p.lr_start_base = number("probe_lr_start_base");
  p.lr_end_base = number("probe_lr_end_base");
  p.seed = static_cast<std::uint64_t>(integer("probe_seed"));
  return p;
}

Architecture ExperimentConfig::architecture(int input_dim, int classes, int grid_h,
                                            int grid_w) const {
  Architecture a;
  a.task = task();
  a.input_dim = input_dim;
  a.encoder_widths = parse_widths(get("encoder"));
  a.hidden = static_cast<int>(integer("hidden"));
  a.classes = classes;
  a.upsample = static_cast<int>(integer("upsample"));
  a.grid_h = grid_h;
  a.grid_w = grid_w;
  try {
    a.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("", e.what());
  }
  return a;
}

ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
  const std::string kind = cfg.get("data");
  const auto data_seed = static_cast<std::uint64_t>(cfg.integer("data_seed"));
  const auto split_seed = static_cast<std::uint64_t>(cfg.integer("split_seed"));
  const double test_frac = cfg.number("test_frac");

  if (cfg.task() == TaskKind::Segmentation) {
    if (kind == "shapes") {
      ShapesOptions o;
      o.classes = static_cast<int>(cfg.integer("classes"));
      o.height = static_cast<int>(cfg.integer("grid_h"));
      o.width = static_cast<int>(cfg.integer("grid_w"));
      o.bg_fraction = cfg.number("bg_fraction");
      o.noise = cfg.number("noise");
      o.images = static_cast<int>(cfg.integer("n_train"));
      SegData d;
      d.train = gen_shapes_seg(data_seed, o);
      o.images = static_cast<int>(cfg.integer("n_test"));
      d.test = gen_shapes_seg(data_seed + 1, o);
      return d;
    }
    if (kind == "grid") {
      SegDataset all = load_grid(cfg.get("data_path"));
      std::vector<int> order(static_cast<std::size_t>(all.images));
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 rng(split_seed);
      std::shuffle(order.begin(), order.end(), rng);
      const int n_test =
          std::clamp(static_cast<int>(std::lround(test_frac * all.images)), 1, all.images - 1);
      std::vector<int> test(order.begin(), order.begin() + n_test);
      std::vector<int> train(order.begin() + n_test, order.end());
      std::sort(test.begin(), test.end());
      std::sort(train.begin(), train.end());
      return SegData{subset(all, train), subset(all, test)};
    }
    throw ConfigError("data", "segmentation needs data = shapes or grid");
  }

  ClassDataset ds;
  if (kind == "blobs") {
    ds = gen_blobs(data_seed, static_cast<int>(cfg.integer("classes")),
                   static_cast<int>(cfg.integer("n_per_class")),
                   static_cast<int>(cfg.integer("dim")), cfg.number("spread"));
  } else if (kind == "csv") {
    ds = load_csv(cfg.get("data_path"));
  } else if (kind == "idx") {
    ds = load_idx(cfg.get("data_path"), cfg.get("labels_path"));
  } else {
    throw ConfigError("data", "classification needs data = blobs, csv or idx");
  }
  ds.validate();
  Split s = split(ds, test_frac, split_seed);
  return ClassData{std::move(ds), std::move(s)};
}

std::string fingerprint(const ExperimentData& data) {
  if (const auto* c = std::get_if<ClassData>(&data)) return fingerprint(c->dataset);
  const auto& s = std::get<SegData>(data);
  return fingerprint(s.train) + "-" + fingerprint(s.test);
}

}  // namespace grm
