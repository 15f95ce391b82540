#include "cosmo/config.hpp"
#include "cosmo/experiment.hpp"

#include "fixture.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <set>

using namespace cosmo;
using namespace cosmo::config;

namespace {

struct EnvGuard {
  explicit EnvGuard(const char* value) {
    if (value) {
      ::setenv("COSMO_LAB_SEED", value, 1);
    } else {
      ::unsetenv("COSMO_LAB_SEED");
    }
  }
  ~EnvGuard() { ::unsetenv("COSMO_LAB_SEED"); }
};

}  // namespace

TEST(Config, KeysAreUniqueAndDescribed) {
  std::set<std::string> names;
  for (const auto& k : keys()) {
    EXPECT_TRUE(names.insert(k.name).second) << k.name;
    EXPECT_FALSE(k.help.empty()) << k.name;
  }
  for (const char* k : {"alpha", "sampler.search_space", "data.seed", "ecm.tau_thr", "eval.k_rerank"}) {
    EXPECT_EQ(names.count(k), 1u) << k;
  }
  EXPECT_NE(describe_keys().find("sampler.batch_size = 96"), std::string::npos);
}

TEST(Config, SetValueParsesEveryType) {
  LabConfig c;
  set_value(c, "epochs", "3");
  set_value(c, "alpha", "0.25");
  set_value(c, "ecm_enabled", "true");
  set_value(c, "itc_mode", "cs");
  set_value(c, "sampler.search_space", "960");
  set_value(c, "eval.mode", "strict");
  apply_override(c, "data.seed=9");
  EXPECT_EQ(c.train.epochs, 3);
  EXPECT_EQ(c.train.alpha, 0.25);
  EXPECT_TRUE(c.train.ecm_enabled);
  EXPECT_EQ(c.train.itc_mode, harness::ItcMode::CS);
  EXPECT_EQ(c.train.sampler.search_space, 960u);
  EXPECT_EQ(c.eval.mode, retrieval::RelevanceMode::Strict);
  EXPECT_EQ(c.data.seed, 9u);
}

TEST(Config, MalformedValuesAndUnknownKeysRejected) {
  LabConfig c;
  EXPECT_THROW(set_value(c, "epochs", "ten"), ConfigError);
  EXPECT_THROW(set_value(c, "epochs", "3.5"), ConfigError);
  EXPECT_THROW(set_value(c, "seed", "-1"), ConfigError);
  EXPECT_THROW(set_value(c, "ecm_enabled", "maybe"), ConfigError);
  EXPECT_THROW(set_value(c, "itc_mode", "soft"), ConfigError);
  EXPECT_THROW(set_value(c, "no_such_key", "1"), ConfigError);
  EXPECT_THROW(apply_override(c, "alpha"), ConfigError);
  EXPECT_THROW(apply_override(c, "=1"), ConfigError);
}

TEST(Config, FinalizeCopiesDimsAndValidates) {
  LabConfig c;
  set_value(c, "data.d_img", "12");
  set_value(c, "data.vocab_size", "300");
  finalize(c);
  EXPECT_EQ(c.train.dims.d_img, 12);
  EXPECT_EQ(c.train.dims.vocab_size, 300);
  set_value(c, "sampler.search_space", "100");
  EXPECT_THROW(finalize(c), ConfigError);
}

TEST(Config, TomlTablesFlattenToDottedKeys) {
  LabConfig c;
  apply_toml(c, R"(
alpha = 1
itc_mode = "SITC"
[sampler]
search_space = 960
[data]
n_concepts = 10
)");
  EXPECT_EQ(c.train.alpha, 1.0);
  EXPECT_EQ(c.train.itc_mode, harness::ItcMode::SITC);
  EXPECT_EQ(c.train.sampler.search_space, 960u);
  EXPECT_EQ(c.data.n_concepts, 10);
  EXPECT_THROW(apply_toml(c, "[sampler]\nwidth = 3\n"), ConfigError);
  EXPECT_THROW(apply_toml(c, "alpha = = 2\n"), ConfigError);
  EXPECT_THROW(apply_toml(c, "epochs = \"many\"\n"), ConfigError);
  EXPECT_THROW(apply_toml_file(c, "/nonexistent/cosmo.toml"), ConfigError);
}

TEST(Config, LayerPrecedence) {
  fixture::TempDir dir("cfg");
  {
    std::ofstream f(dir / "c.toml");
    f << "seed = 5\nalpha = 0.3\nepochs = 4\n";
  }
  {
    const EnvGuard env("11");
    Layers l;
    EXPECT_EQ(resolve(l).train.seed, 11u);
    l.toml_file = dir / "c.toml";
    EXPECT_EQ(resolve(l).train.seed, 5u);
    l.overrides = {"seed=6", "alpha=0.1"};
    const auto c = resolve(l);
    EXPECT_EQ(c.train.seed, 6u);
    EXPECT_EQ(c.train.alpha, 0.1);
    EXPECT_EQ(c.train.epochs, 4);
    Layers no_env;
    no_env.use_env = false;
    EXPECT_EQ(resolve(no_env).train.seed, 0u);
  }
  {
    const EnvGuard env("abc");
    EXPECT_THROW(resolve({}), ConfigError);
  }
}

TEST(Config, JsonSnapshotRoundTripAndHash) {
  LabConfig c;
  set_value(c, "alpha", "0.2");
  set_value(c, "ecm_enabled", "true");
  set_value(c, "con_d.kind", "trained");
  finalize(c);
  const auto j = to_json(c);
  EXPECT_EQ(j.at("alpha").get<double>(), 0.2);
  const LabConfig back = from_json(j);
  EXPECT_TRUE(back == c);
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(config_hash(c).size(), 16u);
  LabConfig other = c;
  set_value(other, "alpha", "0.21");
  EXPECT_NE(config_hash(other), config_hash(c));
  auto bad = j;
  bad["bogus"] = 1;
  EXPECT_THROW(from_json(bad), ConfigError);
  EXPECT_THROW(from_json(nlohmann::json::array()), ConfigError);
  // Missing keys fall back to defaults.
  EXPECT_TRUE(from_json(nlohmann::json::object()) == [] {
    LabConfig d;
    finalize(d);
    return d;
  }());
}

TEST(Manifest, WriteReadAndConfigRecovery) {
  fixture::TempDir dir("manifest");
  LabConfig c;
  set_value(c, "epochs", "2");
  finalize(c);
  experiment::RunManifest m;
  m.config = to_json(c);
  m.version = "test";
  m.seed = 3;
  m.started = experiment::utc_timestamp();
  m.finished = m.started;
  m.outputs = {"metrics.csv"};
  experiment::write_manifest(dir.path(), m);
  const auto back = experiment::read_manifest(dir.path());
  EXPECT_EQ(back.version, "test");
  EXPECT_EQ(back.seed, 3u);
  EXPECT_EQ(back.outputs, m.outputs);
  EXPECT_TRUE(experiment::config_from_manifest(dir / "manifest.json") == c);
  EXPECT_EQ(experiment::run_dir("/r", c).filename().string(), "run-" + config_hash(c));
  EXPECT_EQ(m.started.size(), 20u);  // YYYY-MM-DDTHH:MM:SSZ
}
