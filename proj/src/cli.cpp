#include "dcvit/cli.hpp"

#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <sstream>

#include "dcvit/checks.hpp"
#include "dcvit/complexity.hpp"
#include "dcvit/serialize.hpp"

namespace dcvit::cli {

namespace {

using nlohmann::json;

json load_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open config '" + path + "'");
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config: invalid json in '" + path + "': " + e.what());
  }
}

TrainConfig train_config_from_json(const json& j, const std::string& path) {
  detail::reject_unknown_keys(j, path,
                              {"lr", "betas", "eps", "batch_size", "steps", "seed", "eval_every",
                               "grad_clip", "stop_at_val_accuracy"});
  TrainConfig cfg;
  detail::read_field(j, path, "lr", cfg.lr);
  if (j.contains("betas")) {
    std::vector<double> betas;
    detail::read_field(j, path, "betas", betas);
    if (betas.size() != 2) throw ConfigError("config: " + path + ".betas must have two entries");
    cfg.beta1 = betas[0];
    cfg.beta2 = betas[1];
  }
  detail::read_field(j, path, "eps", cfg.eps);
  detail::read_field(j, path, "batch_size", cfg.batch_size);
  detail::read_field(j, path, "steps", cfg.steps);
  detail::read_field(j, path, "seed", cfg.seed);
  detail::read_field(j, path, "eval_every", cfg.eval_every);
  detail::read_field(j, path, "grad_clip", cfg.grad_clip);
  detail::read_field(j, path, "stop_at_val_accuracy", cfg.stop_at_val_accuracy);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string(e.what()));
  }
  return cfg;
}

BenchSpec bench_from_json(const json& j, const std::string& path) {
  detail::reject_unknown_keys(j, path, {"C_list", "N", "D", "L", "M", "repeats", "H", "seed"});
  BenchSpec spec;
  detail::read_field(j, path, "C_list", spec.C_list);
  detail::read_field(j, path, "N", spec.N);
  detail::read_field(j, path, "D", spec.D);
  detail::read_field(j, path, "L", spec.L);
  detail::read_field(j, path, "M", spec.M);
  detail::read_field(j, path, "repeats", spec.repeats);
  detail::read_field(j, path, "H", spec.H);
  detail::read_field(j, path, "seed", spec.seed);
  if (spec.C_list.empty()) throw ConfigError("config: " + path + ".C_list must not be empty");
  if (spec.repeats < 3) throw ConfigError("config: " + path + ".repeats must be >= 3");
  return spec;
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
  json j = load_json_file(path);
  detail::reject_unknown_keys(j, "<root>", {"model", "train", "task", "bench", "n_samples", "val_fraction"});
  RunConfig cfg;
  if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"), "model");
  if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"), "train");
  if (j.contains("task")) cfg.task = task_from_json(j.at("task"), "task");
  if (j.contains("bench")) cfg.bench = bench_from_json(j.at("bench"), "bench");
  detail::read_field(j, "<root>", "n_samples", cfg.n_samples);
  detail::read_field(j, "<root>", "val_fraction", cfg.val_fraction);
  if (cfg.n_samples < 2) throw ConfigError("config: n_samples must be >= 2");
  if (cfg.val_fraction <= 0 || cfg.val_fraction >= 1)
    throw ConfigError("config: val_fraction must lie in (0,1)");
  return cfg;
}

int cmd_bench(const std::string& config_path, const std::string& out_path, std::ostream& log,
              std::optional<uint64_t> seed_override) {
  try {
    RunConfig run = load_run_config(config_path);
    if (!run.bench) {
      log << "error: config has no 'bench' section\n";
      return kExitConfig;
    }
    BenchSpec spec = *run.bench;
    if (seed_override) spec.seed = *seed_override;

    std::vector<BenchRecord> records;
    std::vector<std::pair<double, double>> dsa_flops, msa_flops, dsa_time, msa_time;
    for (long c : spec.C_list) {
      for (bool msa : {false, true}) {
        ModelConfig cfg = bench_config(c, spec.N, spec.D, spec.L, spec.M, msa, spec.H);
        BenchRecord rec = bench_forward<float>(cfg, spec.repeats, spec.seed + static_cast<uint64_t>(c));
        records.push_back(rec);
        auto& flops_pts = msa ? msa_flops : dsa_flops;
        auto& time_pts = msa ? msa_time : dsa_time;
        flops_pts.push_back({static_cast<double>(c), static_cast<double>(rec.analytic_flops)});
        time_pts.push_back({static_cast<double>(c), rec.wall_time_s});
        log << rec.mode << " C=" << c << " flops=" << rec.analytic_flops << " time=" << rec.wall_time_s
            << "s\n";
      }
    }

    std::ofstream os(out_path, std::ios::binary);
    if (!os) {
      log << "error: cannot open '" << out_path << "' for writing\n";
      return kExitIo;
    }
    write_bench_csv(os, records);
    if (!os.flush()) {
      log << "error: write failed for '" << out_path << "'\n";
      return kExitIo;
    }

    if (dsa_flops.size() >= 2) {
      log << "loglog slope (analytic flops): dsa=" << loglog_slope(dsa_flops)
          << " msa=" << loglog_slope(msa_flops) << "\n";
      log << "loglog slope (wall time):      dsa=" << loglog_slope(dsa_time)
          << " msa=" << loglog_slope(msa_time) << "\n";
    }
    log << "wrote " << records.size() << " rows to " << out_path << "\n";
    return kExitOk;
  } catch (const ConfigError& e) {
    log << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const FormatError& e) {
    log << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

int cmd_train(const std::string& config_path, const std::string& model_out, const std::string& history_out,
              std::ostream& log, std::optional<uint64_t> seed_override) {
  try {
    RunConfig run = load_run_config(config_path);
    if (!run.model || !run.train || !run.task) {
      std::string missing;
      if (!run.model) missing = "model";
      else if (!run.train) missing = "train";
      else missing = "task";
      log << "error: config has no '" << missing << "' section\n";
      return kExitConfig;
    }
    ModelConfig mcfg = *run.model;
    TrainConfig tcfg = *run.train;
    SynthTask task = *run.task;
    if (seed_override) {
      tcfg.seed = *seed_override;
      task.seed = *seed_override + 1;
    }
    if (task.num_classes != mcfg.num_classes)
      throw ConfigError("config: task.num_classes=" + std::to_string(task.num_classes) +
                        " differs from model.num_classes=" + std::to_string(mcfg.num_classes));
    if (task.C > mcfg.C_max)
      throw ConfigError("config: task.C=" + std::to_string(task.C) + " exceeds model.C_max=" +
                        std::to_string(mcfg.C_max));
    if (task.H_img != mcfg.H_img)
      throw ConfigError("config: task.H_img=" + std::to_string(task.H_img) + " differs from model.H_img=" +
                        std::to_string(mcfg.H_img));

    ChannelBatch<float> data = gen_dataset<float>(task, run.n_samples);
    auto splits = split(data, 1.0 - run.val_fraction, run.val_fraction, 0.0, task.seed + 1);
    log << "train " << splits.train.batch_size() << " / val " << splits.val.batch_size() << " samples\n";

    DcVitModel<float> model = DcVitModel<float>::init(mcfg, tcfg.seed);
    TrainHistory history = train(model, splits.train, splits.val, tcfg);

    save_model(model_out, model);
    std::ofstream hs(history_out, std::ios::binary);
    if (!hs) {
      log << "error: cannot open '" << history_out << "' for writing\n";
      return kExitIo;
    }
    for (const EvalRecord& r : history.records) {
      nlohmann::json row = {{"step", r.step}, {"train_loss", r.train_loss}, {"val_accuracy", r.val_accuracy}};
      hs << row.dump() << "\n";
    }
    nlohmann::json alphas = nlohmann::json::object();
    for (const auto& [layer, value] : history.final_alpha) alphas[std::to_string(layer)] = value;
    hs << nlohmann::json{{"alpha", alphas}}.dump() << "\n";
    if (!hs.flush()) {
      log << "error: write failed for '" << history_out << "'\n";
      return kExitIo;
    }

    // reload what was written and confirm it reproduces the recorded accuracy
    DcVitModel<float> reloaded = load_model<float>(model_out);
    double reload_acc = accuracy(reloaded, splits.val);
    if (reload_acc != history.final_val_accuracy())
      throw FormatError("reload check failed: written model gives val accuracy " +
                        std::to_string(reload_acc) + " vs recorded " +
                        std::to_string(history.final_val_accuracy()));
    log << "reload check: written model reproduces val accuracy " << reload_acc << "\n";

    log << "final val accuracy " << history.final_val_accuracy() << ", wrote " << model_out << " and "
        << history_out << "\n";
    return kExitOk;
  } catch (const ConfigError& e) {
    log << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const FormatError& e) {
    log << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

int cmd_gradcheck(const std::string& config_path, std::ostream& log, std::optional<uint64_t> seed_override) {
  try {
    RunConfig run = load_run_config(config_path);
    if (!run.model) {
      log << "error: config has no 'model' section\n";
      return kExitConfig;
    }
    uint64_t seed = seed_override.value_or(run.train ? run.train->seed : 0);
    // gradcheck always runs at 64-bit regardless of the configured precision
    GradCheckReport report = gradcheck(*run.model, seed);
    log << std::left;
    bool ok = true;
    for (const auto& g : report.groups) {
      log << std::setw(18) << g.name << " params=" << std::setw(6) << g.n_params
          << " max_rel_err=" << std::scientific << std::setprecision(3) << g.max_rel_error
          << std::defaultfloat << (g.max_rel_error < 1e-3 ? "" : "  <-- FAIL") << "\n";
      ok = ok && g.max_rel_error < 1e-3;
    }
    log << (ok ? "gradcheck passed" : "gradcheck FAILED") << " (worst " << std::scientific
        << std::setprecision(3) << report.worst() << std::defaultfloat << ", tolerance 1e-3)\n";
    return ok ? kExitOk : kExitCheckFailed;
  } catch (const ConfigError& e) {
    log << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const FormatError& e) {
    log << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    log << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

int cmd_check(std::ostream& log, uint64_t seed) {
  std::vector<CheckResult> results = run_invariant_checks(seed);
  bool all = true;
  for (const CheckResult& r : results) {
    log << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << " (" << r.detail << ")\n";
    all = all && r.pass;
  }
  log << (all ? "all checks passed" : "some checks FAILED") << "\n";
  return all ? kExitOk : kExitCheckFailed;
}

}  // namespace dcvit::cli
