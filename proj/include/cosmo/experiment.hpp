#pragma once

// Run directories: dataset, training, evaluation and a manifest per run.
//
// Layout of <root>/run-<config hash>/:
//   metrics.csv      one row per epoch (harness::metrics_csv_header)
//   ecm_stats.csv    per-epoch connection mining counters
//   schedule.jsonl   batches of the epoch after the last one trained
//   model.bin/.json  final parameters
//   report.json      retrieval report and training-time FN report
//   manifest.json    config snapshot, version, seed, timestamps, outputs

#include "cosmo/config.hpp"
#include "cosmo/harness.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace cosmo::experiment {

struct RunManifest {
  nlohmann::json config;
  std::string version;
  std::uint64_t seed = 0;
  std::string started;
  std::string finished;
  std::string status = "ok";
  std::vector<std::string> outputs;
};

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

// Writes to a temporary sibling, then renames over the target.
void write_atomic(const std::filesystem::path& path, const std::string& contents);
void write_manifest(const std::filesystem::path& dir, const RunManifest& m);
RunManifest read_manifest(const std::filesystem::path& dir);
// Config snapshot of a manifest file or run directory.
config::LabConfig config_from_manifest(const std::filesystem::path& path);

std::string utc_timestamp();

std::filesystem::path run_dir(const std::filesystem::path& root, const config::LabConfig& cfg);

// Generated or loaded per cfg.data / cfg.data_path.
synthdata::SyntheticDataset load_dataset(const config::LabConfig& cfg);

nlohmann::json to_json(const retrieval::RetrievalReport& r);
nlohmann::json to_json(const harness::FnReport& r);

struct RunResult {
  std::filesystem::path dir;
  harness::TrainResult train;
  retrieval::RetrievalReport retrieval;
  harness::FnReport fn;
};

// Trains, evaluates and writes the run directory. On divergence the last
// good parameters are saved as last_good.{bin,json}, the manifest records
// status "diverged", and TrainingDiverged is rethrown.
RunResult run_train(const config::LabConfig& cfg, const std::filesystem::path& root,
                    std::ostream* log = nullptr);

}  // namespace cosmo::experiment
