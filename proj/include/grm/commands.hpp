#pragma once

// Subcommands behind the `grmlab` executable. Each returns the process exit
// code: 0 success, 1 runtime failure, 2 usage or config error.

#include "grm/config.hpp"
#include "grm/eval.hpp"
#include "grm/train.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace grm::cli {

inline constexpr const char* kArtifactVersion = "0.1.0";

struct RunOutcome {
  ModelParams model;
  RunLog log;
  MetricsReport metrics;
};

/// Trains with `method` ("grporm" or "baseline") and evaluates the result.
RunOutcome run_experiment(const ExperimentConfig& cfg, const ExperimentData& data,
                          const std::string& method);

std::string metrics_json(const MetricsReport& report, int indent = -1);

int cmd_train(const std::filesystem::path& config,
              const std::vector<std::string>& overrides,
              const std::filesystem::path& run_dir, std::ostream& out, std::ostream& err);

/// `source` is either a key=value config file or a run's manifest.json.
int cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& source,
             const std::vector<std::string>& overrides, bool sr, bool knn,
             std::ostream& out, std::ostream& err);

int cmd_ablate(const std::filesystem::path& config,
               const std::vector<std::string>& overrides,
               const std::filesystem::path& out_dir, std::ostream& out, std::ostream& err);

/// `fault` names a primitive whose backward rule is deliberately broken.
int cmd_gradcheck(const std::optional<std::string>& fault, std::ostream& out,
                  std::ostream& err);

struct GenDataArgs {
  std::string kind;  // blobs | shapes-seg
  std::uint64_t seed = 0;
  int classes = 10;
  int n_per_class = 200;
  int dim = 8;
  double spread = 0.15;
  int height = 16;
  int width = 16;
  int images = 100;
  double bg_fraction = 0.8;
  double noise = 0.3;
  std::filesystem::path out;
  bool force = false;
};

/// Reads generation args back from a sidecar written by cmd_gen_data.
GenDataArgs read_sidecar(const std::filesystem::path& sidecar);
std::filesystem::path sidecar_path(const std::filesystem::path& out);

int cmd_gen_data(const GenDataArgs& args, std::ostream& out, std::ostream& err);

}  // namespace grm::cli
