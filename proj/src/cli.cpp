#include "cosmo/cli.hpp"

#include "cosmo/checkpoint.hpp"
#include "cosmo/config.hpp"
#include "cosmo/experiment.hpp"
#include "cosmo/version.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace cosmo::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ConfigFlags {
  std::string toml;
  std::string manifest;
  std::vector<std::string> sets;

  void attach(CLI::App& app) {
    app.add_option("--config", toml, "TOML config file")->check(CLI::ExistingFile);
    app.add_option("--manifest", manifest, "start from the config snapshot of a run manifest");
    app.add_option("--set", sets, "override a config key (key=value), repeatable")->take_all();
    app.footer(config::describe_keys());
  }

  // defaults < COSMO_LAB_SEED < manifest / TOML < --set
  config::LabConfig resolve(const std::vector<std::string>& extra = {}) const {
    config::LabConfig cfg;
    if (!manifest.empty()) {
      cfg = experiment::config_from_manifest(manifest);
    } else {
      config::apply_env(cfg);
    }
    if (!toml.empty()) config::apply_toml_file(cfg, toml);
    for (const auto& s : sets) config::apply_override(cfg, s);
    for (const auto& s : extra) config::apply_override(cfg, s);
    config::finalize(cfg);
    return cfg;
  }
};

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct LoadedRun {
  config::LabConfig cfg;
  ModelParams params;
  grit::BatchSchedule schedule;
};

LoadedRun load_run(const fs::path& dir) {
  LoadedRun r;
  r.cfg = experiment::config_from_manifest(dir);
  r.params = checkpoint::load(dir / "model");
  std::ifstream in(dir / "schedule.jsonl");
  if (!in) throw std::runtime_error("run " + dir.string() + " has no schedule.jsonl");
  r.schedule = grit::read_schedule_jsonl(in);
  return r;
}

std::vector<double> parse_values(const std::vector<std::string>& raw, harness::SweepAxis axis,
                                 std::size_t batch) {
  std::vector<double> out;
  for (auto s : raw) {
    double mult = 1.0;
    if (axis == harness::SweepAxis::M && !s.empty() && (s.back() == 'B' || s.back() == 'b')) {
      mult = static_cast<double>(batch);
      s.pop_back();
      if (s.empty()) s = "1";
    }
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || s.empty()) throw config::ConfigError("sweep: bad value '" + s + "'");
    out.push_back(v * mult);
  }
  return out;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"cosmo_lab: false-negative handling experiments on planted image-text data"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  // gen
  auto* gen = app.add_subcommand("gen", "generate a dataset as JSONL");
  ConfigFlags gen_cfg;
  gen_cfg.attach(*gen);
  std::optional<std::uint64_t> gen_seed;
  std::string gen_out;
  gen->add_option("--seed", gen_seed, "dataset seed (data.seed)");
  gen->add_option("--out", gen_out, "output file")->required();

  // train
  auto* train = app.add_subcommand("train", "train one configuration into a run directory");
  ConfigFlags train_cfg;
  train_cfg.attach(*train);
  std::string train_root = "runs";
  bool quiet = false;
  train->add_option("--out", train_root, "root directory for runs")->capture_default_str();
  train->add_flag("--quiet", quiet, "no per-epoch log");

  // count-fn
  auto* count = app.add_subcommand("count-fn", "replay hard-negative selection and count false negatives");
  ConfigFlags count_cfg;
  count_cfg.attach(*count);
  std::string count_run, count_root = "runs", count_judge = "truth", count_log;
  double count_threshold = 0.5;
  count->add_option("--run", count_run, "existing run directory (else train first)");
  count->add_option("--out", count_root, "root directory when training")->capture_default_str();
  count->add_option("--judge", count_judge, "truth | con-d")
      ->check(CLI::IsMember({"truth", "con-d"}))
      ->capture_default_str();
  count->add_option("--threshold", count_threshold, "judge threshold")->capture_default_str();
  count->add_option("--log", count_log, "write the replay log as CSV");

  // eval
  auto* eval = app.add_subcommand("eval", "retrieval evaluation of a trained model");
  ConfigFlags eval_cfg;
  eval_cfg.attach(*eval);
  std::string eval_run, eval_ckpt, eval_split = "eval";
  eval->add_option("--run", eval_run, "run directory");
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint stem (with --config/--set for data)");
  eval->add_option("--split", eval_split, "eval | train")
      ->check(CLI::IsMember({"eval", "train"}))
      ->capture_default_str();
  std::optional<std::size_t> eval_k;
  std::optional<std::string> eval_mode;
  eval->add_option("--k-rerank", eval_k, "ITM re-rank depth (0: off)");
  eval->add_option("--mode", eval_mode, "strict | concept");

  // label-shape
  auto* shape = app.add_subcommand("label-shape", "rank-bucket sums of ITC target rows (CSV)");
  std::string shape_method = "sitc", shape_run;
  double shape_alpha = 0.5;
  std::size_t shape_batch = 96, shape_queue = 0;
  shape->add_option("--method", shape_method, "onehot | sitc | md | cs")
      ->check(CLI::IsMember({"onehot", "sitc", "md", "cs"}))
      ->capture_default_str();
  shape->add_option("--alpha", shape_alpha, "mixing weight")->capture_default_str();
  shape->add_option("--batch", shape_batch, "batch size B (analytic methods)")->capture_default_str();
  shape->add_option("--queue", shape_queue, "MD queue length (0: 8B)")->capture_default_str();
  shape->add_option("--run", shape_run, "trained run directory (required for md, cs)");

  // sweep
  auto* sw = app.add_subcommand("sweep", "train+eval per value of one axis (CSV)");
  ConfigFlags sweep_cfg;
  sweep_cfg.attach(*sw);
  std::string sweep_axis = "m", sweep_out;
  std::vector<std::string> sweep_values;
  std::vector<std::uint64_t> sweep_seeds{0};
  sw->add_option("--axis", sweep_axis, "m | alpha")->check(CLI::IsMember({"m", "alpha"}))->capture_default_str();
  sw->add_option("--values", sweep_values, "axis values; M accepts multiples of B like 10B")
      ->required()
      ->delimiter(',');
  sw->add_option("--seeds", sweep_seeds, "training seeds")->delimiter(',');
  sw->add_option("--out", sweep_out, "output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    // Help of the failed subcommand when there is one.
    const CLI::App* failed = &app;
    for (const auto* sub : app.get_subcommands()) failed = sub;
    err << "error: " << e.what() << "\n\n" << failed->help();
    return kExitConfig;
  }

  try {
    if (gen->parsed()) {
      std::vector<std::string> extra;
      if (gen_seed) extra.push_back("data.seed=" + std::to_string(*gen_seed));
      const auto cfg = gen_cfg.resolve(extra);
      synthdata::save(synthdata::generate(cfg.data), gen_out);
      out << gen_out << "\n";
      return kExitOk;
    }

    if (train->parsed()) {
      const auto cfg = train_cfg.resolve();
      const auto res = experiment::run_train(cfg, train_root, quiet ? nullptr : &err);
      out << res.dir.string() << "\n";
      return kExitOk;
    }

    if (count->parsed()) {
      LoadedRun r;
      if (!count_run.empty()) {
        r = load_run(count_run);
      } else {
        const auto cfg = count_cfg.resolve();
        const auto res = experiment::run_train(cfg, count_root, nullptr);
        r = {cfg, res.train.params, res.train.next_schedule};
      }
      const auto ds = experiment::load_dataset(r.cfg);
      std::unique_ptr<ecm::ConnectionDiscriminator> scorer;
      if (count_judge == "truth") {
        scorer = std::make_unique<ecm::OracleDiscriminator>(ds, ecm::OracleNoise{1.0, 0.0, 0.0, 0});
      } else {
        scorer = std::make_unique<ecm::TrainedDiscriminator>(
            harness::train_con_d(ds, harness::default_con_d_recipe(r.cfg.train)));
      }
      const auto rep = harness::count_false_negatives(ds, r.schedule, r.params, {scorer.get(), count_threshold});
      if (!count_log.empty()) {
        std::ofstream log(count_log);
        if (!log) throw std::runtime_error("cannot write " + count_log);
        log << "batch,side,anchor,negative,judged_false\n";
        for (const auto& e : rep.log) {
          log << e.batch << "," << (e.side == ecm::AnchorSide::Image ? "image" : "text") << ","
              << e.anchor << "," << e.negative << "," << (e.judged_false ? 1 : 0) << "\n";
        }
      }
      json j = experiment::to_json(rep);
      j["judge"] = count_judge;
      j["threshold"] = count_threshold;
      out << j.dump(2) << "\n";
      return kExitOk;
    }

    if (eval->parsed()) {
      config::LabConfig cfg;
      ModelParams params;
      if (!eval_run.empty()) {
        cfg = experiment::config_from_manifest(eval_run);
        for (const auto& s : eval_cfg.sets) config::apply_override(cfg, s);
        config::finalize(cfg);
        params = checkpoint::load(fs::path(eval_run) / "model");
      } else if (!eval_ckpt.empty()) {
        cfg = eval_cfg.resolve();
        params = checkpoint::load(eval_ckpt);
      } else {
        throw config::ConfigError("eval needs --run or --checkpoint");
      }
      if (eval_k) cfg.eval.k_rerank = *eval_k;
      if (eval_mode) {
        try {
          cfg.eval.mode = retrieval::parse_relevance_mode(*eval_mode);
        } catch (const std::invalid_argument& e) {
          throw config::ConfigError(e.what());
        }
      }
      const auto ds = experiment::load_dataset(cfg);
      const auto& split = eval_split == "eval" ? ds.eval_indices() : ds.train_indices();
      out << experiment::to_json(retrieval::retrieval_eval(params, ds, split, cfg.eval)).dump(2) << "\n";
      return kExitOk;
    }

    if (shape->parsed()) {
      if (!(shape_alpha >= 0.0 && shape_alpha <= 1.0)) throw config::ConfigError("--alpha must lie in [0, 1]");
      const harness::ItcMode mode = harness::parse_itc_mode(
          shape_method == "onehot" ? "OneHot" : shape_method == "sitc" ? "SITC" : shape_method == "md" ? "MD" : "CS");
      labelkit::ShapeReport rep;
      std::size_t batch = shape_batch, queue = 0;
      if (shape_run.empty()) {
        if (mode == harness::ItcMode::MD || mode == harness::ItcMode::CS) {
          throw config::ConfigError("label-shape: --method " + shape_method + " needs --run");
        }
        if (batch < 2) throw config::ConfigError("--batch must be >= 2");
        const double a = mode == harness::ItcMode::SITC ? shape_alpha : 0.0;
        rep = labelkit::shape_report(labelkit::smooth(labelkit::onehot_diagonal(batch, batch), a).rows, batch, 0);
      } else {
        const auto r = load_run(shape_run);
        const auto ds = experiment::load_dataset(r.cfg);
        batch = r.cfg.train.sampler.batch_size;
        if (mode == harness::ItcMode::MD) queue = shape_queue != 0 ? shape_queue : 8 * batch;
        rep = harness::analyze_label_shape(r.params, ds, r.schedule, mode, shape_alpha, queue);
      }
      out << labelkit::shape_csv_header() << "\n"
          << labelkit::shape_csv_row(shape_method, shape_alpha, batch, queue, rep) << "\n";
      return kExitOk;
    }

    if (sw->parsed()) {
      const auto cfg = sweep_cfg.resolve();
      harness::SweepOptions opts;
      opts.axis = harness::parse_sweep_axis(sweep_axis);
      opts.values = parse_values(sweep_values, opts.axis, cfg.train.sampler.batch_size);
      opts.seeds = sweep_seeds;
      opts.eval = cfg.eval;
      for (double v : opts.values) {
        try {
          (void)harness::with_axis_value(cfg.train, opts.axis, v);
        } catch (const std::invalid_argument& e) {
          throw config::ConfigError(e.what());
        }
      }
      std::ofstream csv(sweep_out);
      if (!csv) throw std::runtime_error("cannot write " + sweep_out);
      csv << harness::sweep_csv_header() << "\n";
      csv.flush();
      opts.on_row = [&](const harness::SweepRow& row) {
        csv << harness::sweep_csv_row(opts.axis, row) << "\n";
        csv.flush();
        err << "sweep " << sweep_axis << "=" << fmt_double(row.value) << " seed " << row.seed
            << " fn_ratio " << row.fn.ratio() << " irtr_avg " << row.retrieval.irtr_avg << "\n";
      };
      const auto ds = experiment::load_dataset(cfg);
      harness::sweep(cfg.train, ds, opts);
      out << sweep_out << "\n";
      return kExitOk;
    }
  } catch (const config::ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"cosmo_lab"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace cosmo::cli
