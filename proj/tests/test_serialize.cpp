#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dcvit/serialize.hpp"
#include "test_util.hpp"

using dcvit::ChannelBatch;
using dcvit::DcVitModel;
using dcvit::ModelConfig;
using dcvit::Tensor;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.C_max = 2;
  cfg.H_img = 4;
  cfg.P = 2;
  cfg.D = 8;
  cfg.L = 2;
  cfg.H = 2;
  cfg.M = {2};
  cfg.mlp_ratio = 2.0;
  cfg.g_sp = "abmil";
  cfg.g_ch = "max";
  cfg.num_classes = 3;
  return cfg;
}

std::string tmp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("config json round trip preserves every field") {
  ModelConfig cfg = small_config();
  cfg.use_cls_per_channel = true;
  cfg.g_sp = "cls";
  cfg.alpha_init = 0.35;
  cfg.canonical_residual = true;
  nlohmann::json j = dcvit::config_to_json(cfg);
  ModelConfig back = dcvit::model_config_from_json(j);
  CHECK(back.C_max == cfg.C_max);
  CHECK(back.M == cfg.M);
  CHECK(back.alpha_init == cfg.alpha_init);
  CHECK(back.g_sp == "cls");
  CHECK(back.use_cls_per_channel);
  CHECK(back.canonical_residual);
  CHECK(back.block_kind == "dcvit");
}

TEST_CASE("unknown config keys are rejected with their path") {
  nlohmann::json j = dcvit::config_to_json(small_config());
  j["patch"] = 16;
  CHECK_THROWS_WITH_AS(dcvit::model_config_from_json(j, "model"), doctest::Contains("model.patch"),
                       dcvit::ConfigError);
}

TEST_CASE("dcvt round trip gives bit-identical float logits") {
  ModelConfig cfg = small_config();
  DcVitModel<float> model = DcVitModel<float>::init(cfg, 123);

  dcvit::RandomStream rng(9);
  ChannelBatch<float> batch;
  batch.images = rng.normal_tensor<float>({2, 2, 4, 4});
  batch.present = {{true, true}, {true, false}};
  Tensor<float> before = dcvit::forward_logits(batch, model);

  std::string path = tmp_path("dcvit_roundtrip.dcvt");
  dcvit::save_model(path, model);
  DcVitModel<float> loaded = dcvit::load_model<float>(path);
  CHECK(loaded.config.num_classes == 3);
  Tensor<float> after = dcvit::forward_logits(batch, loaded);

  REQUIRE(before.numel() == after.numel());
  for (long i = 0; i < before.numel(); ++i) CHECK(before[i] == after[i]);
  std::remove(path.c_str());
}

TEST_CASE("corrupted magic bytes are reported as bad magic") {
  ModelConfig cfg = small_config();
  DcVitModel<float> model = DcVitModel<float>::init(cfg, 5);
  std::string path = tmp_path("dcvit_badmagic.dcvt");
  dcvit::save_model(path, model);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("JUNK", 4);
  }
  CHECK_THROWS_WITH_AS(dcvit::load_model<float>(path), doctest::Contains("bad magic"), dcvit::FormatError);
  std::remove(path.c_str());
}

TEST_CASE("truncated and tampered containers fail loudly") {
  ModelConfig cfg = small_config();
  DcVitModel<float> model = DcVitModel<float>::init(cfg, 6);
  std::string path = tmp_path("dcvit_tampered.dcvt");
  dcvit::save_model(path, model);

  // truncate to half
  std::ifstream in(path, std::ios::binary);
  std::vector<char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  in.close();
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(dcvit::load_model<float>(path), dcvit::FormatError);

  // unsupported version
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    char v2[4] = {2, 0, 0, 0};
    f.write(v2, 4);
  }
  CHECK_THROWS_WITH_AS(dcvit::load_model<float>(path), doctest::Contains("version"), dcvit::FormatError);

  CHECK_THROWS_AS(dcvit::load_model<float>(tmp_path("does_not_exist.dcvt")), dcvit::FormatError);
  std::remove(path.c_str());
}

TEST_CASE("double models are stored as f32") {
  ModelConfig cfg = small_config();
  DcVitModel<double> model = DcVitModel<double>::init(cfg, 7);
  std::string path = tmp_path("dcvit_f32.dcvt");
  dcvit::save_model(path, model);
  DcVitModel<double> loaded = dcvit::load_model<double>(path);
  // values survive up to f32 rounding
  double worst = 0;
  std::vector<Tensor<double>> orig;
  model.for_each_param([&](const std::string&, dcvit::Var<double>& p) { orig.push_back(p.value()); });
  size_t i = 0;
  loaded.for_each_param([&](const std::string&, dcvit::Var<double>& p) {
    worst = std::max(worst, static_cast<double>(dcvit::max_abs_diff(p.value(), orig[i++])));
  });
  CHECK(worst < 1e-6);
  CHECK(worst >= 0.0);
  std::remove(path.c_str());
}

TEST_CASE("dataset dump writes a DCVT container with task metadata") {
  dcvit::SynthTask task;
  task.kind = "xor_channels";
  task.C = 2;
  task.H_img = 8;
  task.informative_channels = {0, 1};
  task.seed = 21;
  ChannelBatch<float> data = dcvit::gen_dataset<float>(task, 5);
  std::string path = tmp_path("dcvit_dataset.dcvt");
  dcvit::dump_dataset(path, data, task);

  std::ifstream is(path, std::ios::binary);
  char magic[4];
  is.read(magic, 4);
  CHECK(std::string(magic, 4) == "DCVT");
  is.seekg(16);  // magic + version + header length
  std::string rest{std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
  nlohmann::json header = nlohmann::json::parse(rest.substr(0, rest.find("}}}") + 3));
  CHECK(header.at("task").at("kind") == "xor_channels");
  CHECK(header.at("tensors").contains("images"));
  CHECK(header.at("tensors").contains("labels"));
  CHECK(header.at("tensors").contains("present"));
  std::remove(path.c_str());
}

TEST_CASE("task json round trip") {
  dcvit::SynthTask task;
  task.kind = "xor_channels";
  task.C = 4;
  task.H_img = 8;
  task.informative_channels = {1, 2};
  task.noise_std = 0.5;
  task.seed = 99;
  dcvit::SynthTask back = dcvit::task_from_json(dcvit::task_to_json(task));
  CHECK(back.kind == task.kind);
  CHECK(back.C == task.C);
  CHECK(back.informative_channels == task.informative_channels);
  CHECK(back.noise_std == task.noise_std);
  CHECK(back.seed == task.seed);

  nlohmann::json j = dcvit::task_to_json(task);
  j["shape"] = 1;
  CHECK_THROWS_WITH_AS(dcvit::task_from_json(j, "task"), doctest::Contains("task.shape"), dcvit::ConfigError);
}
