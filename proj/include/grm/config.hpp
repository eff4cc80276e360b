#pragma once

// Flat `key = value` experiment configuration.
//
//   # comment
//   task = classification
//   epochs = 50
//
// Unknown keys are rejected. Command-line overrides use --key=value and win
// over file values. Task-dependent defaults (batch size, learning rates) are
// applied for keys that were never set explicitly.

#include "grm/data.hpp"
#include "grm/eval.hpp"
#include "grm/model.hpp"
#include "grm/train.hpp"

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace grm {

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::invalid_argument(message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

class ExperimentConfig {
 public:
  ExperimentConfig();

  static ExperimentConfig from_text(const std::string& text);
  static ExperimentConfig from_file(const std::filesystem::path& path);

  /// Throws ConfigError for unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  /// Applies "--key=value" (or "key=value") strings.
  void apply_overrides(const std::vector<std::string>& overrides);

  const std::string& get(const std::string& key) const;
  double number(const std::string& key) const;
  long integer(const std::string& key) const;
  bool flag(const std::string& key) const;

  /// Every key with its resolved value, in sorted key order.
  const std::map<std::string, std::string>& values() const { return values_; }
  std::string to_text() const;

  TaskKind task() const;
  TrainConfig train_config() const;
  ProbeConfig probe_config() const;
  Architecture architecture(int input_dim, int classes, int grid_h = 0, int grid_w = 0) const;

  static const std::vector<std::string>& known_keys();

 private:
  void resolve_task_defaults();

  std::map<std::string, std::string> values_;
  std::map<std::string, bool> explicit_;
};

struct ClassData {
  ClassDataset dataset;
  Split split;
};

struct SegData {
  SegDataset train;
  SegDataset test;
};

using ExperimentData = std::variant<ClassData, SegData>;

/// Generates or loads the dataset named by the config's `data` key.
ExperimentData load_experiment_data(const ExperimentConfig& cfg);
std::string fingerprint(const ExperimentData& data);

}  // namespace grm
