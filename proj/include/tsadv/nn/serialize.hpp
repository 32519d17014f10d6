#pragma once

// Model files: an 8-byte magic, a format version, the scalar width, a JSON
// header (architecture, layer specs, seed, training log, tensor shapes) and
// the raw parameter/buffer arrays in layer order. Loading reproduces the
// saved model bit for bit.

#include <cstdint>
#include <cstring>
#include <fstream>
#include "json.hpp"
#include <sstream>
#include <string>

#include "tsadv/error.hpp"
#include "tsadv/nn/model.hpp"

namespace tsadv::nn {

inline constexpr char kModelMagic[8] = {'T', 'S', 'A', 'D', 'V', 'M', 'D', 'L'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

inline nlohmann::json to_json(const LayerSpec& s) {
  return {{"kind", to_string(s.kind)}, {"in", s.in},       {"out", s.out},
          {"kernel", s.kernel},        {"stride", s.stride}, {"pool", s.pool},
          {"padding", to_string(s.padding)}};
}

inline LayerSpec layer_spec_from_json(const nlohmann::json& j) {
  LayerSpec s;
  s.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  s.in = j.at("in").get<std::size_t>();
  s.out = j.at("out").get<std::size_t>();
  s.kernel = j.at("kernel").get<std::size_t>();
  s.stride = j.at("stride").get<std::size_t>();
  s.pool = j.at("pool").get<std::size_t>();
  s.padding = padding_from_string(j.at("padding").get<std::string>());
  s.validate();
  return s;
}

inline nlohmann::json to_json(const ArchitectureConfig& a) {
  return {{"architecture", to_string(a.architecture)},
          {"input_length", a.input_length},
          {"num_classes", a.num_classes},
          {"gatn_hidden_units", a.gatn_hidden_units},
          {"gatn_residual", a.gatn_residual}};
}

inline ArchitectureConfig architecture_config_from_json(const nlohmann::json& j) {
  ArchitectureConfig a;
  a.architecture = architecture_from_string(j.at("architecture").get<std::string>());
  a.input_length = j.at("input_length").get<std::size_t>();
  a.num_classes = j.at("num_classes").get<std::size_t>();
  a.gatn_hidden_units = j.at("gatn_hidden_units").get<std::vector<std::size_t>>();
  a.gatn_residual = j.at("gatn_residual").get<bool>();
  return a;
}

template <typename T>
void write_model(std::ostream& out, const Model<T>& model) {
  nlohmann::json header;
  header["arch"] = to_json(model.arch);
  header["rng_seed"] = model.rng_seed;
  header["layers"] = nlohmann::json::array();
  for (const auto& s : model.net.specs()) header["layers"].push_back(to_json(s));
  header["training_log"] = nlohmann::json::array();
  for (const auto& r : model.training_log) header["training_log"].push_back({r.epoch, r.loss, r.metric});
  header["tensors"] = nlohmann::json::array();
  const auto state = model.net.state();
  for (const auto* t : state) header["tensors"].push_back(t->shape());
  const std::string text = header.dump();

  const std::uint32_t version = kModelFormatVersion;
  const std::uint32_t width = sizeof(T);
  const std::uint64_t hlen = text.size();
  out.write(kModelMagic, sizeof(kModelMagic));
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&width), sizeof(width));
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* t : state) out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(T)));
  if (!out) throw Error("write_model: stream error");
}

template <typename T>
Model<T> read_model(std::istream& in) {
  char magic[8];
  std::uint32_t version = 0, width = 0;
  std::uint64_t hlen = 0;
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0) throw ParseError("not a model file (bad magic)");
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&width), sizeof(width));
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in) throw ParseError("truncated model header");
  if (version != kModelFormatVersion) throw ParseError("unsupported model format version " + std::to_string(version));
  if (width != sizeof(T)) throw ParseError("model stores " + std::to_string(width * 8) + "-bit scalars");
  std::string text(hlen, '\0');
  in.read(text.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw ParseError("truncated model header");
  const auto header = nlohmann::json::parse(text);

  Model<T> m;
  m.arch = architecture_config_from_json(header.at("arch"));
  m.rng_seed = header.at("rng_seed").get<std::uint64_t>();
  std::vector<LayerSpec> specs;
  for (const auto& j : header.at("layers")) specs.push_back(layer_spec_from_json(j));
  m.net = Sequential<T>(specs);
  for (const auto& r : header.at("training_log"))
    m.training_log.push_back({r.at(0).get<std::size_t>(), r.at(1).get<double>(), r.at(2).get<double>()});
  auto state = m.net.state();
  const auto& shapes = header.at("tensors");
  if (shapes.size() != state.size()) throw ParseError("model tensor count does not match its layers");
  for (std::size_t i = 0; i < state.size(); ++i) {
    const auto shape = shapes.at(i).get<Shape>();
    if (shape != state[i]->shape()) throw ParseError("tensor " + std::to_string(i) + " has unexpected shape " + shape_str(shape));
    in.read(reinterpret_cast<char*>(state[i]->data()), static_cast<std::streamsize>(state[i]->size() * sizeof(T)));
    if (!in) throw ParseError("truncated tensor data");
  }
  return m;
}

template <typename T>
void save_model(const Model<T>& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  write_model(out, model);
}

template <typename T>
Model<T> load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot open model file '" + path + "'");
  return read_model<T>(in);
}

template <typename T>
std::string model_bytes(const Model<T>& model) {
  std::ostringstream os(std::ios::binary);
  write_model(os, model);
  return os.str();
}

}  // namespace tsadv::nn
