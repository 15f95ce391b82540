#include "cosmo/checkpoint.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace cosmo::checkpoint {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint archive assumes a little-endian host");

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

}  // namespace

void save(const ModelParams& params, const std::filesystem::path& stem) {
  params.validate();
  json manifest{{"format", "cosmo-lab/params"}, {"version", 1}, {"dtype", "fp64"},
                {"temperature", params.temperature}};
  json tensors = json::array();
  std::ofstream bin(with_suffix(stem, ".bin"), std::ios::binary | std::ios::trunc);
  if (!bin) throw CheckpointError("cannot write " + with_suffix(stem, ".bin").string());
  std::size_t offset = 0;
  for (auto id : kAllParams) {
    const Matrix& m = params.weights[id];
    tensors.push_back({{"name", param_name(id)},
                       {"shape", {m.rows(), m.cols()}},
                       {"dtype", "fp64"},
                       {"offset", offset}});
    bin.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
    offset += static_cast<std::size_t>(m.size());
  }
  if (!bin) throw CheckpointError("write failed for " + with_suffix(stem, ".bin").string());
  manifest["tensors"] = std::move(tensors);
  manifest["total_elements"] = offset;
  std::ofstream js(with_suffix(stem, ".json"), std::ios::trunc);
  if (!js) throw CheckpointError("cannot write " + with_suffix(stem, ".json").string());
  js << manifest.dump(2) << '\n';
}

ModelParams load(const std::filesystem::path& stem) {
  std::ifstream js(with_suffix(stem, ".json"));
  if (!js) throw CheckpointError("cannot read " + with_suffix(stem, ".json").string());
  json manifest;
  try {
    js >> manifest;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  std::ifstream bin(with_suffix(stem, ".bin"), std::ios::binary);
  if (!bin) throw CheckpointError("cannot read " + with_suffix(stem, ".bin").string());
  std::vector<char> raw((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  ModelParams p;
  try {
    if (manifest.at("dtype").get<std::string>() != "fp64") {
      throw CheckpointError("unsupported dtype");
    }
    p.temperature = manifest.at("temperature").get<double>();
    const auto& tensors = manifest.at("tensors");
    if (tensors.size() != kNumParams) throw CheckpointError("unexpected tensor count");
    for (std::size_t i = 0; i < kNumParams; ++i) {
      const auto& t = tensors[i];
      if (t.at("name").get<std::string>() != param_name(kAllParams[i])) {
        throw CheckpointError("unexpected tensor name " + t.at("name").get<std::string>());
      }
      const auto rows = t.at("shape")[0].get<Eigen::Index>();
      const auto cols = t.at("shape")[1].get<Eigen::Index>();
      const auto offset = t.at("offset").get<std::size_t>();
      const auto count = static_cast<std::size_t>(rows * cols);
      if ((offset + count) * sizeof(double) > raw.size()) {
        throw CheckpointError("tensor archive truncated");
      }
      Matrix m(rows, cols);
      std::memcpy(m.data(), raw.data() + offset * sizeof(double), count * sizeof(double));
      p.weights.tensors[i] = std::move(m);
    }
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("invalid checkpoint: ") + e.what());
  }
  return p;
}

}  // namespace cosmo::checkpoint
