#include "cosmo/cli.hpp"
#include "cosmo/synthdata.hpp"

#include "fixture.hpp"

#include <gtest/gtest.h>

#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace cosmo;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

const std::vector<std::string> kSmall{"--set", "data.n_concepts=8", "--set", "data.examples_per_concept=5",
                                      "--set", "data.d_img=8",      "--set", "data.vocab_size=40",
                                      "--set", "data.seq_len=6",    "--set", "data.d_lat=6",
                                      "--set", "sampler.batch_size=8", "--set", "sampler.search_space=16",
                                      "--set", "epochs=2",          "--set", "eval.k_rerank=4",
                                      "--set", "model.d_tok=6",     "--set", "model.d_proj=5"};

std::vector<std::string> with_small(std::vector<std::string> args) {
  args.insert(args.end(), kSmall.begin(), kSmall.end());
  return args;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

}  // namespace

TEST(Cli, HelpVersionAndUsageErrors) {
  EXPECT_EQ(run_cli({"--help"}).code, cli::kExitOk);
  const auto v = run_cli({"--version"});
  EXPECT_EQ(v.code, cli::kExitOk);
  EXPECT_FALSE(v.out.empty());
  const auto train_help = run_cli({"train", "--help"});
  EXPECT_EQ(train_help.code, cli::kExitOk);
  EXPECT_NE(train_help.out.find("sampler.search_space"), std::string::npos);
  EXPECT_EQ(run_cli({}).code, cli::kExitConfig);
  const auto bad = run_cli({"train", "--bogus"});
  EXPECT_EQ(bad.code, cli::kExitConfig);
  EXPECT_NE(bad.err.find("--bogus"), std::string::npos);
  EXPECT_EQ(run_cli({"gen"}).code, cli::kExitConfig);
}

TEST(Cli, ConfigErrorsExitTwo) {
  fixture::TempDir dir("cli");
  EXPECT_EQ(run_cli({"train", "--out", dir.path().string(), "--set", "nope=1"}).code, cli::kExitConfig);
  EXPECT_EQ(run_cli({"train", "--out", dir.path().string(), "--set", "alpha=2"}).code, cli::kExitConfig);
  EXPECT_EQ(run_cli({"label-shape", "--method", "md"}).code, cli::kExitConfig);
  EXPECT_EQ(run_cli({"label-shape", "--alpha", "1.5"}).code, cli::kExitConfig);
  EXPECT_EQ(run_cli({"eval"}).code, cli::kExitConfig);
  EXPECT_EQ(run_cli(with_small({"sweep", "--values", "12", "--out", (dir / "s.csv").string()})).code,
            cli::kExitConfig);
}

TEST(Cli, RuntimeErrorsExitOne) {
  fixture::TempDir dir("cli");
  // A missing manifest is a bad config input; a run without its model is a runtime failure.
  EXPECT_EQ(run_cli({"eval", "--run", (dir / "missing").string()}).code, cli::kExitConfig);
  const auto t = run_cli(with_small({"train", "--quiet", "--out", dir.path().string()}));
  ASSERT_EQ(t.code, 0) << t.err;
  const std::filesystem::path run = trim(t.out);
  std::filesystem::remove(run / "model.bin");
  EXPECT_EQ(run_cli({"eval", "--run", run.string()}).code, cli::kExitRuntime);
  EXPECT_EQ(run_cli({"gen", "--out", "/nonexistent/dir/d.jsonl"}).code, cli::kExitRuntime);
}

TEST(Cli, LabelShapeAnalytic) {
  const auto r = run_cli({"label-shape", "--method", "sitc", "--alpha", "0.5", "--batch", "96"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_EQ(r.out, "method,alpha,B,Q,bucket1,bucket2,bucket3\nsitc,0.5,96,0,0.5260,0.4740,\n");
  const auto one = run_cli({"label-shape", "--method", "onehot", "--batch", "8"});
  EXPECT_NE(one.out.find("onehot,0.5,8,0,1.0000,0.0000,"), std::string::npos) << one.out;
}

TEST(Cli, GenIsDeterministic) {
  fixture::TempDir dir("cli");
  const auto a = (dir / "a.jsonl").string(), b = (dir / "b.jsonl").string();
  ASSERT_EQ(run_cli(with_small({"gen", "--seed", "4", "--out", a})).code, 0);
  ASSERT_EQ(run_cli(with_small({"gen", "--seed", "4", "--out", b})).code, 0);
  EXPECT_EQ(slurp(a), slurp(b));
  const auto ds = synthdata::load(a);
  EXPECT_EQ(ds.config().seed, 4u);
  EXPECT_EQ(ds.size(), 40u);
}

TEST(Cli, TrainThenInspect) {
  fixture::TempDir dir("cli");
  const auto t = run_cli(with_small({"train", "--quiet", "--out", dir.path().string(), "--set", "ecm_enabled=true",
                                     "--set", "itc_mode=SITC"}));
  ASSERT_EQ(t.code, 0) << t.err;
  const std::filesystem::path run = trim(t.out);
  for (const char* f : {"metrics.csv", "ecm_stats.csv", "schedule.jsonl", "model.bin", "model.json",
                        "report.json", "manifest.json"}) {
    EXPECT_TRUE(std::filesystem::exists(run / f)) << f;
  }
  const auto metrics = slurp(run / "metrics.csv");
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 3);
  const auto manifest = nlohmann::json::parse(slurp(run / "manifest.json"));
  EXPECT_EQ(manifest.at("status"), "ok");

  const auto log = (dir / "log.csv").string();
  const auto c = run_cli({"count-fn", "--run", run.string(), "--log", log});
  ASSERT_EQ(c.code, 0) << c.err;
  const auto fn = nlohmann::json::parse(c.out);
  const auto log_text = slurp(log);
  EXPECT_EQ(static_cast<std::size_t>(std::count(log_text.begin(), log_text.end(), '\n')),
            fn.at("total_negatives").get<std::size_t>() + 1);

  const auto e = run_cli({"eval", "--run", run.string(), "--mode", "strict", "--k-rerank", "0"});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto rep = nlohmann::json::parse(e.out);
  EXPECT_EQ(rep.at("mode"), "strict");

  const auto s = run_cli({"label-shape", "--run", run.string(), "--method", "cs", "--alpha", "0.4"});
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_NE(s.out.find("cs,0.4,8,0,"), std::string::npos) << s.out;
  const auto m = run_cli({"label-shape", "--run", run.string(), "--method", "md", "--alpha", "0.4", "--queue", "16"});
  ASSERT_EQ(m.code, 0) << m.err;
  EXPECT_NE(m.out.find("md,0.4,8,16,"), std::string::npos) << m.out;
}

TEST(Cli, ManifestReplayIsByteIdentical) {
  fixture::TempDir dir("cli");
  const auto first = run_cli(with_small({"train", "--quiet", "--out", (dir / "a").string()}));
  ASSERT_EQ(first.code, 0) << first.err;
  const std::filesystem::path run_a = trim(first.out);
  const auto second =
      run_cli({"train", "--quiet", "--manifest", (run_a / "manifest.json").string(), "--out", (dir / "b").string()});
  ASSERT_EQ(second.code, 0) << second.err;
  const std::filesystem::path run_b = trim(second.out);
  EXPECT_EQ(run_a.filename(), run_b.filename());
  EXPECT_EQ(slurp(run_a / "metrics.csv"), slurp(run_b / "metrics.csv"));
}

TEST(Cli, SweepWritesOneRowPerValueAndSeed) {
  fixture::TempDir dir("cli");
  const auto csv = (dir / "sweep.csv").string();
  const auto r = run_cli(with_small({"sweep", "--axis", "m", "--values", "1B,4B", "--seeds", "0,1", "--out", csv}));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto text = slurp(csv);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);
  EXPECT_NE(text.find("\nM,32,1,"), std::string::npos) << text;
}

TEST(Cli, BinaryRuns) {
  const char* bin = std::getenv("COSMO_LAB_BIN");
  if (bin == nullptr) GTEST_SKIP() << "COSMO_LAB_BIN not set";
  fixture::TempDir dir("cli");
  const std::string out = (dir / "help.txt").string();
  EXPECT_EQ(std::system((std::string(bin) + " --help > " + out).c_str()), 0);
  EXPECT_NE(slurp(out).find("label-shape"), std::string::npos);
  const int rc = std::system((std::string(bin) + " train --set nope=1 2> /dev/null").c_str());
  ASSERT_TRUE(WIFEXITED(rc));
  EXPECT_EQ(WEXITSTATUS(rc), cli::kExitConfig);
}
