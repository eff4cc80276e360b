// grmlab: train, evaluate and ablate GRPO-RM runs on desk-scale data.

#include "grm/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"grmlab - group relative policy optimisation for representation models"};
  app.require_subcommand(1);

  std::string config;
  std::string run_dir;
  auto* train = app.add_subcommand("train", "train a model; extra --key=value override config");
  train->add_option("config", config, "key = value config file")->required();
  train->add_option("--out", run_dir, "run directory")->required();
  train->allow_extras();

  std::string checkpoint;
  std::string source;
  bool sr_only = false;
  bool knn_only = false;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint; prints metrics JSON");
  eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  eval->add_option("--config", source, "config file or run manifest.json")->required();
  eval->add_flag("--sr-only", sr_only, "only run the softmax-regression probe");
  eval->add_flag("--knn-only", knn_only, "only run kNN");
  eval->allow_extras();

  std::string ablate_out;
  auto* ablate = app.add_subcommand("ablate", "compare reward modes and the CE baseline");
  ablate->add_option("config", config, "key = value config file")->required();
  ablate->add_option("--out", ablate_out, "output directory")->required();
  ablate->allow_extras();

  std::string fault;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck->add_option("--inject-fault", fault,
                        "negative control: break one primitive's backward rule");

  grm::cli::GenDataArgs gen;
  std::string sidecar;
  auto* gen_data = app.add_subcommand("gen-data", "write a synthetic dataset");
  gen_data->add_option("kind", gen.kind, "blobs | shapes-seg");
  gen_data->add_option("--out", gen.out, "output file")->required();
  gen_data->add_option("--seed", gen.seed);
  gen_data->add_option("--classes", gen.classes);
  gen_data->add_option("--n-per-class", gen.n_per_class);
  gen_data->add_option("--dim", gen.dim);
  gen_data->add_option("--spread", gen.spread);
  gen_data->add_option("--height", gen.height);
  gen_data->add_option("--width", gen.width);
  gen_data->add_option("--images", gen.images);
  gen_data->add_option("--bg-fraction", gen.bg_fraction);
  gen_data->add_option("--noise", gen.noise);
  gen_data->add_option("--sidecar", sidecar, "regenerate from a previous run's sidecar JSON");
  gen_data->add_flag("--force", gen.force, "overwrite existing files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*train) {
    return grm::cli::cmd_train(config, train->remaining(), run_dir, std::cout, std::cerr);
  }
  if (*eval) {
    return grm::cli::cmd_eval(checkpoint, source, eval->remaining(), !knn_only, !sr_only,
                              std::cout, std::cerr);
  }
  if (*ablate) {
    return grm::cli::cmd_ablate(config, ablate->remaining(), ablate_out, std::cout, std::cerr);
  }
  if (*gradcheck) {
    return grm::cli::cmd_gradcheck(fault.empty() ? std::nullopt : std::optional(fault),
                                   std::cout, std::cerr);
  }
  if (*gen_data) {
    if (!sidecar.empty()) {
      try {
        auto from = grm::cli::read_sidecar(sidecar);
        from.out = gen.out;
        from.force = gen.force;
        gen = from;
      } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 1;
      }
    }
    return grm::cli::cmd_gen_data(gen, std::cout, std::cerr);
  }
  return 2;
}
