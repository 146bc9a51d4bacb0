#pragma once

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcvit/datagen.hpp"
#include "dcvit/encoder.hpp"

namespace dcvit {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- ModelConfig <-> JSON --------------------------------------------------

inline nlohmann::json config_to_json(const ModelConfig& cfg) {
  return nlohmann::json{{"C_max", cfg.C_max},
                        {"H_img", cfg.H_img},
                        {"P", cfg.P},
                        {"D", cfg.D},
                        {"L", cfg.L},
                        {"H", cfg.H},
                        {"M", cfg.M},
                        {"alpha_init", cfg.alpha_init},
                        {"mlp_ratio", cfg.mlp_ratio},
                        {"use_channel_embed", cfg.use_channel_embed},
                        {"use_cls_per_channel", cfg.use_cls_per_channel},
                        {"g_sp", cfg.g_sp},
                        {"g_ch", cfg.g_ch},
                        {"num_classes", cfg.num_classes},
                        {"block_kind", cfg.block_kind},
                        {"use_norms", cfg.use_norms},
                        {"canonical_residual", cfg.canonical_residual}};
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::string& path,
                                const std::vector<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError("config: " + path + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const auto& k : allowed) known = known || k == it.key();
    if (!known) throw ConfigError("config: unknown key " + path + "." + it.key());
  }
}

template <class T>
void read_field(const nlohmann::json& j, const std::string& path, const char* key, T& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config: bad value for " + path + "." + key);
  }
}

}  // namespace detail

inline ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path = "model") {
  detail::reject_unknown_keys(j, path,
                              {"C_max", "H_img", "P", "D", "L", "H", "M", "alpha_init", "mlp_ratio",
                               "use_channel_embed", "use_cls_per_channel", "g_sp", "g_ch", "num_classes",
                               "block_kind", "use_norms", "canonical_residual"});
  ModelConfig cfg;
  detail::read_field(j, path, "C_max", cfg.C_max);
  detail::read_field(j, path, "H_img", cfg.H_img);
  detail::read_field(j, path, "P", cfg.P);
  detail::read_field(j, path, "D", cfg.D);
  detail::read_field(j, path, "L", cfg.L);
  detail::read_field(j, path, "H", cfg.H);
  detail::read_field(j, path, "M", cfg.M);
  detail::read_field(j, path, "alpha_init", cfg.alpha_init);
  detail::read_field(j, path, "mlp_ratio", cfg.mlp_ratio);
  detail::read_field(j, path, "use_channel_embed", cfg.use_channel_embed);
  detail::read_field(j, path, "use_cls_per_channel", cfg.use_cls_per_channel);
  detail::read_field(j, path, "g_sp", cfg.g_sp);
  detail::read_field(j, path, "g_ch", cfg.g_ch);
  detail::read_field(j, path, "num_classes", cfg.num_classes);
  detail::read_field(j, path, "block_kind", cfg.block_kind);
  detail::read_field(j, path, "use_norms", cfg.use_norms);
  detail::read_field(j, path, "canonical_residual", cfg.canonical_residual);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string(e.what()));
  }
  return cfg;
}

// ---- SynthTask <-> JSON -----------------------------------------------------

inline nlohmann::json task_to_json(const SynthTask& task) {
  return nlohmann::json{{"kind", task.kind},
                        {"C", task.C},
                        {"H_img", task.H_img},
                        {"num_classes", task.num_classes},
                        {"informative_channels", task.informative_channels},
                        {"noise_std", task.noise_std},
                        {"seed", task.seed}};
}

inline SynthTask task_from_json(const nlohmann::json& j, const std::string& path = "task") {
  detail::reject_unknown_keys(
      j, path, {"kind", "C", "H_img", "num_classes", "informative_channels", "noise_std", "seed"});
  SynthTask task;
  detail::read_field(j, path, "kind", task.kind);
  detail::read_field(j, path, "C", task.C);
  detail::read_field(j, path, "H_img", task.H_img);
  detail::read_field(j, path, "num_classes", task.num_classes);
  detail::read_field(j, path, "informative_channels", task.informative_channels);
  detail::read_field(j, path, "noise_std", task.noise_std);
  detail::read_field(j, path, "seed", task.seed);
  try {
    task.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string(e.what()));
  }
  return task;
}

// ---- DCVT tensor container --------------------------------------------------
//
// Layout: magic "DCVT", u32 version=1, u64 header length, UTF-8 JSON header
// {"config": <ModelConfig>, "tensors": {name: {shape, dtype:"f32", offset}}},
// then contiguous little-endian f32 blobs. Offsets are relative to the start
// of the blob region.

namespace detail {

inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw FormatError("dcvt: truncated file");
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

inline uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw FormatError("dcvt: truncated file");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

namespace detail {

inline void write_container(const std::string& path, nlohmann::json header, const std::vector<float>& blob) {
  const std::string header_str = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("dcvt: cannot open '" + path + "' for writing");
  os.write("DCVT", 4);
  put_u32(os, 1);
  put_u64(os, header_str.size());
  os.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  os.write(reinterpret_cast<const char*>(blob.data()),
           static_cast<std::streamsize>(blob.size() * sizeof(float)));
  if (!os) throw FormatError("dcvt: write failed for '" + path + "'");
}

template <class S>
void append_tensor(nlohmann::json& tensors, std::vector<float>& blob, const std::string& name,
                   const Tensor<S>& t) {
  tensors[name] = {{"shape", t.shape()},
                   {"dtype", "f32"},
                   {"offset", static_cast<uint64_t>(blob.size()) * sizeof(float)}};
  for (long i = 0; i < t.numel(); ++i) blob.push_back(static_cast<float>(t[i]));
}

}  // namespace detail

template <class S>
void save_model(const std::string& path, DcVitModel<S>& model) {
  nlohmann::json tensors = nlohmann::json::object();
  std::vector<float> blob;
  model.for_each_param(
      [&](const std::string& name, Var<S>& p) { detail::append_tensor(tensors, blob, name, p.value()); });
  detail::write_container(path, {{"config", config_to_json(model.config)}, {"tensors", tensors}}, blob);
}

// Inspection dump of a generated dataset: images, labels and the presence
// mask as f32 tensors, with the generating task in the header. Datasets are
// regenerated from (task, seed) rather than loaded back from this file.
template <class S>
void dump_dataset(const std::string& path, const ChannelBatch<S>& batch, const SynthTask& task) {
  nlohmann::json tensors = nlohmann::json::object();
  std::vector<float> blob;
  detail::append_tensor(tensors, blob, "images", batch.images);
  Tensor<S> labels({std::max<long>(1, static_cast<long>(batch.labels.size()))});
  for (size_t i = 0; i < batch.labels.size(); ++i) labels[static_cast<long>(i)] = static_cast<S>(batch.labels[i]);
  detail::append_tensor(tensors, blob, "labels", labels);
  Tensor<S> present({batch.batch_size(), batch.channels()});
  for (long b = 0; b < batch.batch_size(); ++b)
    for (long c = 0; c < batch.channels(); ++c)
      present.at2(b, c) = batch.present[static_cast<size_t>(b)][static_cast<size_t>(c)] ? S(1) : S(0);
  detail::append_tensor(tensors, blob, "present", present);
  detail::write_container(path, {{"task", task_to_json(task)}, {"tensors", tensors}}, blob);
}

template <class S>
DcVitModel<S> load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("dcvt: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "DCVT", 4) != 0) throw FormatError("dcvt: bad magic in '" + path + "'");
  uint32_t version = detail::get_u32(is);
  if (version != 1) throw FormatError("dcvt: unsupported version " + std::to_string(version));
  uint64_t header_len = detail::get_u64(is);
  std::string header_str(header_len, '\0');
  is.read(header_str.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw FormatError("dcvt: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("dcvt: invalid header json: " + std::string(e.what()));
  }
  if (!header.contains("config") || !header.contains("tensors"))
    throw FormatError("dcvt: header missing config or tensors");

  ModelConfig cfg = model_config_from_json(header.at("config"), "config");
  DcVitModel<S> model = DcVitModel<S>::init(cfg, 0);

  std::vector<char> blob{std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
  const nlohmann::json& tensors = header.at("tensors");
  size_t used = 0;
  model.for_each_param([&](const std::string& name, Var<S>& p) {
    if (!tensors.contains(name)) throw FormatError("dcvt: missing tensor '" + name + "'");
    const nlohmann::json& spec = tensors.at(name);
    std::vector<long> shape = spec.at("shape").get<std::vector<long>>();
    if (shape != p.value().shape())
      throw FormatError("dcvt: tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                        shape_str(p.value().shape()));
    if (spec.at("dtype").get<std::string>() != "f32")
      throw FormatError("dcvt: tensor '" + name + "' has unsupported dtype");
    uint64_t off = spec.at("offset").get<uint64_t>();
    long n = p.value().numel();
    if (off + static_cast<uint64_t>(n) * sizeof(float) > blob.size())
      throw FormatError("dcvt: tensor '" + name + "' extends past end of file");
    Tensor<S> t(p.value().shape());
    const float* src = reinterpret_cast<const float*>(blob.data() + off);
    for (long i = 0; i < n; ++i) t[i] = static_cast<S>(src[i]);
    p.set_value(std::move(t));
    ++used;
  });
  if (used != tensors.size()) throw FormatError("dcvt: file contains unexpected tensors");
  return model;
}

}  // namespace dcvit
