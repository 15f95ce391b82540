#pragma once

// Run configuration: built-in defaults, then COSMO_LAB_SEED, then a TOML
// file, then `--set key=value` overrides. Keys are flat dotted names
// ("alpha", "sampler.search_space", "data.seed"); TOML tables flatten to the
// same names.

#include "cosmo/harness.hpp"
#include "cosmo/retrieval.hpp"
#include "cosmo/synthdata.hpp"

#include <json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cosmo::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LabConfig {
  synthdata::GenConfig data;
  // Load the dataset from this JSONL file instead of generating it.
  std::string data_path;
  harness::TrainConfig train;
  retrieval::RetrievalOptions eval;

  bool operator==(const LabConfig&) const = default;
};

enum class ValueType { Int, UInt, Double, Bool, String };

struct KeyInfo {
  std::string name;
  ValueType type;
  std::string help;
};

// Every settable key, in snapshot order.
const std::vector<KeyInfo>& keys();
std::string describe_keys();

// Parses `text` according to the key's type and assigns it.
// Throws ConfigError on unknown keys or malformed values.
void set_value(LabConfig& cfg, std::string_view key, std::string_view text);
// "key=value" form.
void apply_override(LabConfig& cfg, std::string_view assignment);

void apply_toml(LabConfig& cfg, std::string_view toml_text, std::string_view source = "<toml>");
void apply_toml_file(LabConfig& cfg, const std::filesystem::path& path);

// Reads COSMO_LAB_SEED into train.seed when set.
void apply_env(LabConfig& cfg);

// Copies data dims into the model dims and validates everything.
// Throws ConfigError.
void finalize(LabConfig& cfg);

struct Layers {
  std::filesystem::path toml_file;  // empty: none
  std::vector<std::string> overrides;
  bool use_env = true;
};

LabConfig resolve(const Layers& layers);

nlohmann::json to_json(const LabConfig& cfg);
// Starts from defaults and applies every key present. Unknown keys throw.
LabConfig from_json(const nlohmann::json& j);

// FNV-1a over the canonical snapshot, 16 hex digits.
std::string config_hash(const LabConfig& cfg);

}  // namespace cosmo::config
