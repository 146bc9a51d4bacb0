#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "dcvit/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"DC-ViT: decoupled self-attention engine, benchmark and training harness"};
  app.require_subcommand(1);

  std::string config_path, out_path, history_path;
  uint64_t seed = 0;
  bool seed_set = false;

  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "override the config seed")->each([&](const std::string&) {
      seed_set = true;
    });
  };

  CLI::App* bench = app.add_subcommand("bench", "sweep channel counts, write the FLOPs/runtime CSV");
  bench->add_option("--config", config_path, "run config (json)")->required();
  bench->add_option("--out", out_path, "output CSV path")->default_val("bench.csv");
  add_seed(bench);

  CLI::App* train = app.add_subcommand("train", "train on a synthetic task, save model and history");
  train->add_option("--config", config_path, "run config (json)")->required();
  train->add_option("--out", out_path, "output model path (DCVT)")->default_val("model.dcvt");
  train->add_option("--history", history_path, "training history path (json lines)")
      ->default_val("history.jsonl");
  add_seed(train);

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "compare analytic gradients to finite differences");
  gradcheck->add_option("--config", config_path, "run config (json)")->required();
  add_seed(gradcheck);

  CLI::App* check = app.add_subcommand("check", "run the cross-module invariant suite");
  add_seed(check);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) ? dcvit::cli::kExitConfig : dcvit::cli::kExitOk;
  }

  std::optional<uint64_t> seed_override;
  if (seed_set) seed_override = seed;

  if (bench->parsed()) return dcvit::cli::cmd_bench(config_path, out_path, std::cout, seed_override);
  if (train->parsed())
    return dcvit::cli::cmd_train(config_path, out_path, history_path, std::cout, seed_override);
  if (gradcheck->parsed()) return dcvit::cli::cmd_gradcheck(config_path, std::cout, seed_override);
  if (check->parsed()) return dcvit::cli::cmd_check(std::cout, seed_set ? seed : 0);
  return dcvit::cli::kExitConfig;
}
