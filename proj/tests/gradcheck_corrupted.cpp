// Built with DCVIT_CORRUPT_BACKWARD: the gelu vector-Jacobian product is
// deliberately scaled by 1.01, so gradcheck must report failure. Exits 0 only
// when the corruption is detected.
#include <cstdio>

#include "dcvit/training.hpp"

int main() {
  dcvit::ModelConfig cfg;
  cfg.C_max = 2;
  cfg.H_img = 4;
  cfg.P = 2;
  cfg.D = 8;
  cfg.L = 2;
  cfg.H = 2;
  cfg.M = {2};
  cfg.mlp_ratio = 2.0;
  cfg.g_sp = "mean";
  cfg.g_ch = "max";
  cfg.num_classes = 2;

  dcvit::GradCheckReport report = dcvit::gradcheck(cfg, 11);
  if (report.pass(1e-3)) {
    std::fprintf(stderr, "corrupted backward went undetected (worst %.3e)\n", report.worst());
    return 1;
  }
  std::printf("corrupted backward detected as expected (worst %.3e)\n", report.worst());
  return 0;
}
