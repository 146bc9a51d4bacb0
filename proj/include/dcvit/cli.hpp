#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dcvit/datagen.hpp"
#include "dcvit/encoder.hpp"
#include "dcvit/training.hpp"

namespace dcvit::cli {

// Exit codes shared by every subcommand: 0 success, 1 check/gradcheck
// failure, 2 config error, 3 I/O or format error.
constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

struct BenchSpec {
  std::vector<long> C_list;
  long N = 64;
  long D = 64;
  long L = 4;
  std::vector<long> M = {2};
  long repeats = 5;
  long H = 0;  // 0: derive from D
  uint64_t seed = 0;
};

struct RunConfig {
  std::optional<ModelConfig> model;
  std::optional<TrainConfig> train;
  std::optional<SynthTask> task;
  std::optional<BenchSpec> bench;
  long n_samples = 512;      // dataset size for cmd_train
  double val_fraction = 0.25;
};

RunConfig load_run_config(const std::string& path);

int cmd_bench(const std::string& config_path, const std::string& out_path, std::ostream& log,
              std::optional<uint64_t> seed_override = {});
int cmd_train(const std::string& config_path, const std::string& model_out, const std::string& history_out,
              std::ostream& log, std::optional<uint64_t> seed_override = {});
int cmd_gradcheck(const std::string& config_path, std::ostream& log,
                  std::optional<uint64_t> seed_override = {});
int cmd_check(std::ostream& log, uint64_t seed = 0);

}  // namespace dcvit::cli
