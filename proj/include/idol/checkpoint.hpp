#pragma once

// Model checkpoints: `<name>.model.json` carries the topology and metadata,
// `<name>.model.bin` the parameters as little-endian 64-bit floats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "idol/error.hpp"
#include "idol/nn.hpp"

namespace idol {

struct CheckpointInfo {
  std::uint64_t seed = 0;
  std::string stage;    // "general" or "idol"
  std::string patient;  // empty for the general model
};

struct Checkpoint {
  Model model;
  CheckpointInfo info;
};

inline std::filesystem::path checkpoint_header_path(const std::filesystem::path& dir, const std::string& name) {
  return dir / (name + ".model.json");
}

inline std::filesystem::path checkpoint_data_path(const std::filesystem::path& dir, const std::string& name) {
  return dir / (name + ".model.bin");
}

inline void save_checkpoint(const Model& m, const CheckpointInfo& info, const std::filesystem::path& dir,
                            const std::string& name) {
  nlohmann::ordered_json layers = nlohmann::ordered_json::array();
  for (const auto& l : m.layers) {
    nlohmann::ordered_json lj{{"kind", std::string(to_string(l.kind))}};
    if (parameter_count(l) > 0) {
      lj["in"] = l.in;
      lj["out"] = l.out;
    }
    layers.push_back(lj);
  }
  nlohmann::ordered_json j{{"topology", m.topology},
                           {"input_shape", m.input_shape},
                           {"layers", layers},
                           {"parameter_count", m.parameter_count()},
                           {"seed", info.seed},
                           {"stage", info.stage}};
  if (!info.patient.empty()) j["patient"] = info.patient;
  j["data_file"] = checkpoint_data_path(dir, name).filename().string();
  j["byte_order"] = "little";

  const auto header = checkpoint_header_path(dir, name);
  std::ofstream hj(header);
  if (!hj) throw IoError("cannot write " + header.string());
  hj << j.dump(2) << '\n';
  if (!hj) throw IoError("failed writing " + header.string());

  const auto data = checkpoint_data_path(dir, name);
  std::vector<char> bytes(m.params.size() * 8);
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(m.params[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  std::ofstream bin(data, std::ios::binary);
  if (!bin) throw IoError("cannot write " + data.string());
  bin.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!bin) throw IoError("failed writing " + data.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir, const std::string& name) {
  const auto header = checkpoint_header_path(dir, name);
  std::ifstream hj(header);
  if (!hj) throw IoError("cannot open " + header.string());
  Checkpoint c;
  try {
    nlohmann::json j;
    hj >> j;
    std::vector<LayerSpec> layers;
    for (const auto& lj : j.at("layers"))
      layers.push_back({layer_kind_from_string(lj.at("kind").get<std::string>()), lj.value("in", std::size_t{0}),
                        lj.value("out", std::size_t{0})});
    c.model = make_model(j.at("topology"), j.at("input_shape").get<Shape>(), std::move(layers));
    if (j.at("parameter_count").get<std::size_t>() != c.model.parameter_count())
      throw IoError(header.string() + ": parameter_count does not match the layer specs");
    c.info = {j.at("seed"), j.at("stage"), j.value("patient", std::string{})};
  } catch (const nlohmann::json::exception& e) {
    throw IoError(header.string() + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw IoError(header.string() + ": " + e.what());
  }

  const auto data = checkpoint_data_path(dir, name);
  std::ifstream bin(data, std::ios::binary);
  if (!bin) throw IoError("cannot open " + data.string());
  std::vector<char> bytes(c.model.params.size() * 8);
  bin.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (bin.gcount() != static_cast<std::streamsize>(bytes.size()) || bin.peek() != std::char_traits<char>::eof())
    throw IoError(data.string() + ": expected exactly " + std::to_string(bytes.size()) + " bytes");
  for (std::size_t i = 0; i < c.model.params.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t{static_cast<unsigned char>(bytes[i * 8 + b])} << (8 * b);
    c.model.params[i] = std::bit_cast<double>(bits);
  }
  return c;
}

}  // namespace idol
