#include "cosmo/config.hpp"

#include <toml.hpp>

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

namespace cosmo::config {

namespace {

using nlohmann::json;

struct Entry {
  KeyInfo info;
  std::function<json(const LabConfig&)> get;
  std::function<void(LabConfig&, const json&)> set;
};

[[noreturn]] void fail(std::string_view key, const std::string& msg) {
  throw ConfigError("config key '" + std::string(key) + "': " + msg);
}

std::int64_t as_int(std::string_view key, const json& v) {
  if (!v.is_number_integer()) fail(key, "expected an integer");
  if (v.is_number_unsigned()) {
    const auto u = v.get<std::uint64_t>();
    if (u > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) fail(key, "out of range");
    return static_cast<std::int64_t>(u);
  }
  return v.get<std::int64_t>();
}

std::uint64_t as_uint(std::string_view key, const json& v) {
  if (!v.is_number_integer()) fail(key, "expected a non-negative integer");
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  const auto i = v.get<std::int64_t>();
  if (i < 0) fail(key, "expected a non-negative integer");
  return static_cast<std::uint64_t>(i);
}

template <class Acc>
Entry int_key(std::string name, std::string help, Acc acc) {
  return {{std::move(name), ValueType::Int, std::move(help)},
          [acc](const LabConfig& c) { return json(acc(const_cast<LabConfig&>(c))); },
          [acc, n = name](LabConfig& c, const json& v) {
            const auto i = as_int(n, v);
            if (i < std::numeric_limits<int>::min() || i > std::numeric_limits<int>::max()) fail(n, "out of range");
            acc(c) = static_cast<int>(i);
          }};
}

template <class Acc>
Entry uint_key(std::string name, std::string help, Acc acc) {
  return {{std::move(name), ValueType::UInt, std::move(help)},
          [acc](const LabConfig& c) { return json(acc(const_cast<LabConfig&>(c))); },
          [acc, n = name](LabConfig& c, const json& v) {
            using T = std::remove_reference_t<decltype(acc(c))>;
            acc(c) = static_cast<T>(as_uint(n, v));
          }};
}

template <class Acc>
Entry double_key(std::string name, std::string help, Acc acc) {
  return {{std::move(name), ValueType::Double, std::move(help)},
          [acc](const LabConfig& c) { return json(acc(const_cast<LabConfig&>(c))); },
          [acc, n = name](LabConfig& c, const json& v) {
            if (!v.is_number()) fail(n, "expected a number");
            acc(c) = v.get<double>();
          }};
}

template <class Acc>
Entry bool_key(std::string name, std::string help, Acc acc) {
  return {{std::move(name), ValueType::Bool, std::move(help)},
          [acc](const LabConfig& c) { return json(acc(const_cast<LabConfig&>(c))); },
          [acc, n = name](LabConfig& c, const json& v) {
            if (!v.is_boolean()) fail(n, "expected true or false");
            acc(c) = v.get<bool>();
          }};
}

// String-valued key backed by an enum with parse/to_string.
template <class Acc, class Parse>
Entry enum_key(std::string name, std::string help, Acc acc, Parse parse) {
  return {{std::move(name), ValueType::String, std::move(help)},
          [acc](const LabConfig& c) { return json(std::string(to_string(acc(const_cast<LabConfig&>(c))))); },
          [acc, parse, n = name](LabConfig& c, const json& v) {
            if (!v.is_string()) fail(n, "expected a string");
            try {
              acc(c) = parse(v.get<std::string>());
            } catch (const std::invalid_argument& e) {
              fail(n, e.what());
            }
          }};
}

const std::vector<Entry>& registry() {
  static const std::vector<Entry> r = [] {
    std::vector<Entry> v;
    // data
    v.push_back(int_key("data.n_concepts", "number of planted concepts", [](LabConfig& c) -> int& { return c.data.n_concepts; }));
    v.push_back(int_key("data.examples_per_concept", "examples per concept", [](LabConfig& c) -> int& { return c.data.examples_per_concept; }));
    v.push_back(int_key("data.d_lat", "latent dimension", [](LabConfig& c) -> int& { return c.data.d_lat; }));
    v.push_back(int_key("data.d_img", "image feature dimension", [](LabConfig& c) -> int& { return c.data.d_img; }));
    v.push_back(int_key("data.vocab_size", "vocabulary size incl. PAD and MASK", [](LabConfig& c) -> int& { return c.data.vocab_size; }));
    v.push_back(int_key("data.seq_len", "tokens per caption", [](LabConfig& c) -> int& { return c.data.seq_len; }));
    v.push_back(double_key("data.noise_sigma", "image noise std", [](LabConfig& c) -> double& { return c.data.noise_sigma; }));
    v.push_back(int_key("data.signature_count", "signature tokens per concept", [](LabConfig& c) -> int& { return c.data.signature_count; }));
    v.push_back(double_key("data.eval_fraction", "held-out fraction per concept", [](LabConfig& c) -> double& { return c.data.eval_fraction; }));
    v.push_back(uint_key("data.seed", "dataset seed", [](LabConfig& c) -> std::uint64_t& { return c.data.seed; }));
    v.push_back({{"data.path", ValueType::String, "load dataset JSONL instead of generating (empty: generate)"},
                 [](const LabConfig& c) { return json(c.data_path); },
                 [](LabConfig& c, const json& j) {
                   if (!j.is_string()) fail("data.path", "expected a string");
                   c.data_path = j.get<std::string>();
                 }});
    // train
    v.push_back(int_key("epochs", "training epochs", [](LabConfig& c) -> int& { return c.train.epochs; }));
    v.push_back(double_key("learning_rate", "SGD step size", [](LabConfig& c) -> double& { return c.train.learning_rate; }));
    v.push_back(enum_key("optimizer", "SGD | SGDMomentum", [](LabConfig& c) -> harness::Optimizer& { return c.train.optimizer; },
                         [](const std::string& s) { return harness::parse_optimizer(s); }));
    v.push_back(double_key("momentum", "momentum coefficient (SGDMomentum)", [](LabConfig& c) -> double& { return c.train.momentum; }));
    v.push_back(double_key("alpha", "label mixing weight", [](LabConfig& c) -> double& { return c.train.alpha; }));
    v.push_back(enum_key("itc_mode", "OneHot | SITC | MD | CS", [](LabConfig& c) -> harness::ItcMode& { return c.train.itc_mode; },
                         [](const std::string& s) { return harness::parse_itc_mode(s); }));
    v.push_back(bool_key("ecm_enabled", "connection mining on", [](LabConfig& c) -> bool& { return c.train.ecm_enabled; }));
    v.push_back(bool_key("ecm_eliminate_only", "drop mined positives instead of converting", [](LabConfig& c) -> bool& { return c.train.ecm_eliminate_only; }));
    v.push_back(uint_key("seed", "training seed (COSMO_LAB_SEED if unset)", [](LabConfig& c) -> std::uint64_t& { return c.train.seed; }));
    v.push_back(double_key("temperature", "contrastive temperature", [](LabConfig& c) -> double& { return c.train.temperature; }));
    v.push_back(double_key("init_scale", "encoder init multiplier", [](LabConfig& c) -> double& { return c.train.init_scale; }));
    v.push_back(double_key("ema_coeff", "momentum encoder EMA coefficient", [](LabConfig& c) -> double& { return c.train.ema_coeff; }));
    v.push_back(uint_key("md_queue_size", "MD queue length (0: 8 * batch_size)", [](LabConfig& c) -> std::size_t& { return c.train.md_queue_size; }));
    v.push_back(double_key("mask_prob", "MLM masking probability", [](LabConfig& c) -> double& { return c.train.mask_prob; }));
    // sampler
    v.push_back(uint_key("sampler.batch_size", "mini-batch size B", [](LabConfig& c) -> std::size_t& { return c.train.sampler.batch_size; }));
    v.push_back(uint_key("sampler.search_space", "GRIT search space M (multiple of B)", [](LabConfig& c) -> std::size_t& { return c.train.sampler.search_space; }));
    // ecm
    v.push_back(double_key("ecm.tau_thr", "conversion threshold", [](LabConfig& c) -> double& { return c.train.ecm.tau_thr; }));
    v.push_back(double_key("ecm.neutral_floor", "lower edge of the neutral band", [](LabConfig& c) -> double& { return c.train.ecm.neutral_floor; }));
    // con_d
    v.push_back(enum_key("con_d.kind", "oracle | trained", [](LabConfig& c) -> harness::ConDKind& { return c.train.con_d.kind; },
                         [](const std::string& s) { return harness::parse_con_d_kind(s); }));
    v.push_back(double_key("con_d.p_hi", "oracle prob for true connections", [](LabConfig& c) -> double& { return c.train.con_d.oracle.p_hi; }));
    v.push_back(double_key("con_d.p_lo", "oracle prob for non-connections", [](LabConfig& c) -> double& { return c.train.con_d.oracle.p_lo; }));
    v.push_back(double_key("con_d.flip_eps", "oracle per-pair flip rate", [](LabConfig& c) -> double& { return c.train.con_d.oracle.flip_eps; }));
    v.push_back(uint_key("con_d.seed", "oracle flip seed", [](LabConfig& c) -> std::uint64_t& { return c.train.con_d.oracle.seed; }));
    v.push_back(int_key("con_d.pretrain_epochs", "trained Con-D pre-training epochs", [](LabConfig& c) -> int& { return c.train.con_d.pretrain_epochs; }));
    v.push_back(int_key("con_d.finetune_epochs", "trained Con-D ITM fine-tune epochs", [](LabConfig& c) -> int& { return c.train.con_d.finetune_epochs; }));
    v.push_back(double_key("con_d.finetune_lr", "trained Con-D fine-tune step size", [](LabConfig& c) -> double& { return c.train.con_d.finetune_lr; }));
    // model
    v.push_back(int_key("model.d_tok", "token embedding dimension", [](LabConfig& c) -> int& { return c.train.dims.d_tok; }));
    v.push_back(int_key("model.d_proj", "shared embedding dimension", [](LabConfig& c) -> int& { return c.train.dims.d_proj; }));
    v.push_back(int_key("model.itm_hidden", "ITM head hidden width", [](LabConfig& c) -> int& { return c.train.dims.itm_hidden; }));
    // eval
    v.push_back(uint_key("eval.k_rerank", "ITM re-rank depth (0: off)", [](LabConfig& c) -> std::size_t& { return c.eval.k_rerank; }));
    v.push_back(enum_key("eval.mode", "strict | concept", [](LabConfig& c) -> retrieval::RelevanceMode& { return c.eval.mode; },
                         [](const std::string& s) { return retrieval::parse_relevance_mode(s); }));
    return v;
  }();
  return r;
}

const Entry& lookup(std::string_view key) {
  for (const auto& e : registry()) {
    if (e.info.name == key) return e;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  const auto* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, out);
  return r.ec == std::errc{} && r.ptr == end;
}

json parse_text(const Entry& e, std::string_view text) {
  const auto& name = e.info.name;
  switch (e.info.type) {
    case ValueType::Int: {
      std::int64_t v;
      if (!parse_number(text, v)) fail(name, "'" + std::string(text) + "' is not an integer");
      return v;
    }
    case ValueType::UInt: {
      std::uint64_t v;
      if (!parse_number(text, v)) fail(name, "'" + std::string(text) + "' is not a non-negative integer");
      return v;
    }
    case ValueType::Double: {
      double v;
      if (!parse_number(text, v)) fail(name, "'" + std::string(text) + "' is not a number");
      return v;
    }
    case ValueType::Bool:
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      fail(name, "'" + std::string(text) + "' is not true/false");
    case ValueType::String:
      return std::string(text);
  }
  fail(name, "unsupported type");
}

json toml_to_json(std::string_view key, const toml::node& node) {
  if (auto v = node.as_integer()) return static_cast<std::int64_t>(v->get());
  if (auto v = node.as_floating_point()) return v->get();
  if (auto v = node.as_boolean()) return v->get();
  if (auto v = node.as_string()) return v->get();
  fail(key, "unsupported TOML value type");
}

void apply_table(LabConfig& cfg, const toml::table& table, const std::string& prefix) {
  for (const auto& [k, node] : table) {
    const std::string name = prefix.empty() ? std::string(k.str()) : prefix + "." + std::string(k.str());
    if (const auto* sub = node.as_table()) {
      apply_table(cfg, *sub, name);
      continue;
    }
    const Entry& e = lookup(name);
    e.set(cfg, toml_to_json(name, node));
  }
}

}  // namespace

const std::vector<KeyInfo>& keys() {
  static const std::vector<KeyInfo> k = [] {
    std::vector<KeyInfo> out;
    for (const auto& e : registry()) out.push_back(e.info);
    return out;
  }();
  return k;
}

std::string describe_keys() {
  const LabConfig defaults;
  std::ostringstream os;
  os << "Config keys (--set key=value, or TOML):\n";
  for (const auto& e : registry()) {
    os << "  " << e.info.name << " = " << e.get(defaults).dump() << "  " << e.info.help << "\n";
  }
  return os.str();
}

void set_value(LabConfig& cfg, std::string_view key, std::string_view text) {
  const Entry& e = lookup(key);
  e.set(cfg, parse_text(e, text));
}

void apply_override(LabConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("--set expects key=value, got '" + std::string(assignment) + "'");
  }
  set_value(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

void apply_toml(LabConfig& cfg, std::string_view toml_text, std::string_view source) {
  toml::table table;
  try {
    table = toml::parse(toml_text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "TOML parse error in " << source << ": " << e.description() << " (line "
       << e.source().begin.line << ")";
    throw ConfigError(os.str());
  }
  apply_table(cfg, table, "");
}

void apply_toml_file(LabConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_toml(cfg, ss.str(), path.string());
}

void apply_env(LabConfig& cfg) {
  if (const char* s = std::getenv("COSMO_LAB_SEED"); s != nullptr && *s != '\0') {
    try {
      set_value(cfg, "seed", s);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("COSMO_LAB_SEED: ") + e.what());
    }
  }
}

void finalize(LabConfig& cfg) {
  cfg.train.dims.d_img = cfg.data.d_img;
  cfg.train.dims.vocab_size = cfg.data.vocab_size;
  try {
    cfg.data.validate();
    cfg.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

LabConfig resolve(const Layers& layers) {
  LabConfig cfg;
  if (layers.use_env) apply_env(cfg);
  if (!layers.toml_file.empty()) apply_toml_file(cfg, layers.toml_file);
  for (const auto& o : layers.overrides) apply_override(cfg, o);
  finalize(cfg);
  return cfg;
}

json to_json(const LabConfig& cfg) {
  json j = json::object();
  for (const auto& e : registry()) j[e.info.name] = e.get(cfg);
  return j;
}

LabConfig from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config snapshot must be a JSON object");
  LabConfig cfg;
  for (const auto& [k, v] : j.items()) lookup(k).set(cfg, v);
  finalize(cfg);
  return cfg;
}

std::string config_hash(const LabConfig& cfg) {
  const std::string s = to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace cosmo::config
