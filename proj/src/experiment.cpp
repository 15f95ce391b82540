#include "cosmo/experiment.hpp"

#include "cosmo/checkpoint.hpp"
#include "cosmo/version.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <ostream>
#include <sstream>
#include <system_error>

namespace cosmo::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

nlohmann::json to_json(const RunManifest& m) {
  return json{{"config", m.config},     {"version", m.version}, {"seed", m.seed},
              {"started", m.started},   {"finished", m.finished}, {"status", m.status},
              {"outputs", m.outputs}};
}

RunManifest manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    m.config = j.at("config");
    m.version = j.at("version").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.started = j.value("started", "");
    m.finished = j.value("finished", "");
    m.status = j.value("status", "ok");
    m.outputs = j.value("outputs", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw config::ConfigError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void write_atomic(const fs::path& path, const std::string& contents) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << contents;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_manifest(const fs::path& dir, const RunManifest& m) {
  write_atomic(dir / "manifest.json", to_json(m).dump(2) + "\n");
}

RunManifest read_manifest(const fs::path& dir) {
  const fs::path p = fs::is_directory(dir) ? dir / "manifest.json" : dir;
  std::ifstream in(p);
  if (!in) throw config::ConfigError("cannot read manifest " + p.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw config::ConfigError("manifest " + p.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

config::LabConfig config_from_manifest(const fs::path& path) {
  return config::from_json(read_manifest(path).config);
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path run_dir(const fs::path& root, const config::LabConfig& cfg) {
  return root / ("run-" + config::config_hash(cfg));
}

synthdata::SyntheticDataset load_dataset(const config::LabConfig& cfg) {
  if (cfg.data_path.empty()) return synthdata::generate(cfg.data);
  return synthdata::load(cfg.data_path);
}

nlohmann::json to_json(const retrieval::RetrievalReport& r) {
  return json{{"tr_r1", r.tr_r1}, {"tr_r5", r.tr_r5}, {"tr_r10", r.tr_r10},
              {"ir_r1", r.ir_r1}, {"ir_r5", r.ir_r5}, {"ir_r10", r.ir_r10},
              {"irtr_avg", r.irtr_avg}, {"mode", std::string(retrieval::to_string(r.mode))},
              {"n", r.n}};
}

nlohmann::json to_json(const harness::FnReport& r) {
  return json{{"fn_wrt_image", r.fn_wrt_image},       {"fn_wrt_text", r.fn_wrt_text},
              {"negatives_image", r.negatives_image}, {"negatives_text", r.negatives_text},
              {"total_negatives", r.total_negatives}, {"ratio_image", r.ratio_image()},
              {"ratio_text", r.ratio_text()},         {"ratio", r.ratio()}};
}

namespace {

class CsvSink {
 public:
  CsvSink(const fs::path& path, const std::string& header) : out_(path, std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    out_ << header << "\n";
    out_.flush();
  }
  void row(const std::string& r) {
    out_ << r << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

}  // namespace

RunResult run_train(const config::LabConfig& cfg, const fs::path& root, std::ostream* log) {
  RunResult res;
  res.dir = run_dir(root, cfg);
  fs::create_directories(res.dir);

  RunManifest man;
  man.config = config::to_json(cfg);
  man.version = kVersion;
  man.seed = cfg.train.seed;
  man.started = utc_timestamp();

  const auto ds = load_dataset(cfg);
  harness::check_compatible(cfg.train, ds);
  std::unique_ptr<ecm::ConnectionDiscriminator> con_d;
  if (cfg.train.ecm_enabled) con_d = harness::make_con_d(cfg.train, ds);

  CsvSink metrics(res.dir / "metrics.csv", harness::metrics_csv_header());
  CsvSink ecm_stats(res.dir / "ecm_stats.csv", harness::ecm_stats_csv_header());
  man.outputs = {"metrics.csv", "ecm_stats.csv"};
  auto on_epoch = [&](const harness::EpochMetrics& m, const harness::TrainState&) {
    metrics.row(harness::metrics_csv_row(m));
    ecm_stats.row(harness::ecm_stats_csv_row(m));
    if (log) {
      *log << "epoch " << m.epoch << " itc " << m.itc << " itm " << m.itm << " mlm " << m.mlm
           << " total " << m.total << "\n";
    }
  };

  try {
    res.train = harness::train(cfg.train, ds, con_d.get(), on_epoch);
  } catch (const harness::TrainingDiverged& e) {
    checkpoint::save(e.last_good(), res.dir / "last_good");
    man.outputs.insert(man.outputs.end(), {"last_good.bin", "last_good.json"});
    man.status = "diverged";
    man.finished = utc_timestamp();
    write_manifest(res.dir, man);
    throw;
  }

  checkpoint::save(res.train.params, res.dir / "model");
  {
    std::ostringstream os;
    grit::write_schedule_jsonl(os, res.train.next_schedule);
    write_atomic(res.dir / "schedule.jsonl", os.str());
  }
  res.retrieval = retrieval::retrieval_eval(res.train.params, ds, ds.eval_indices(), cfg.eval);
  res.fn = harness::training_fn_report(res.train);
  const json report{{"retrieval", to_json(res.retrieval)}, {"fn", to_json(res.fn)}};
  write_atomic(res.dir / "report.json", report.dump(2) + "\n");
  man.outputs.insert(man.outputs.end(),
                     {"model.bin", "model.json", "schedule.jsonl", "report.json", "manifest.json"});
  man.finished = utc_timestamp();
  write_manifest(res.dir, man);
  return res;
}

}  // namespace cosmo::experiment
