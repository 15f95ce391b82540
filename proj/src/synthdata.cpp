#include "cosmo/synthdata.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace cosmo::synthdata {

using nlohmann::json;

namespace {

constexpr const char* kFormatTag = "cosmo-lab/dataset";
constexpr int kFormatVersion = 1;

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("GenConfig: " + what);
}

json vec_to_json(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd json_to_vec(const json& j, Eigen::Index expected) {
  auto values = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(values.size()) != expected) {
    throw DatasetFormatError("vector length mismatch");
  }
  return Eigen::Map<Eigen::VectorXd>(values.data(), expected);
}

json config_to_json(const GenConfig& c) {
  return json{{"n_concepts", c.n_concepts},
              {"examples_per_concept", c.examples_per_concept},
              {"d_lat", c.d_lat},
              {"d_img", c.d_img},
              {"vocab_size", c.vocab_size},
              {"seq_len", c.seq_len},
              {"noise_sigma", c.noise_sigma},
              {"signature_count", c.signature_count},
              {"eval_fraction", c.eval_fraction},
              {"seed", c.seed}};
}

GenConfig config_from_json(const json& j) {
  GenConfig c;
  c.n_concepts = j.at("n_concepts").get<int>();
  c.examples_per_concept = j.at("examples_per_concept").get<int>();
  c.d_lat = j.at("d_lat").get<int>();
  c.d_img = j.at("d_img").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.seq_len = j.at("seq_len").get<int>();
  c.noise_sigma = j.at("noise_sigma").get<double>();
  c.signature_count = j.at("signature_count").get<int>();
  c.eval_fraction = j.at("eval_fraction").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

void GenConfig::validate() const {
  require(n_concepts >= 1, "n_concepts must be >= 1");
  require(examples_per_concept >= 2,
          "examples_per_concept must be >= 2 so that false negatives exist");
  require(d_lat >= 1, "d_lat must be >= 1");
  require(d_img >= 1, "d_img must be >= 1");
  require(signature_count >= 1, "signature_count must be >= 1");
  require(seq_len >= signature_count, "seq_len must be >= signature_count");
  require(static_cast<long long>(vocab_size) >
              static_cast<long long>(n_concepts) * signature_count + 2,
          "vocab_size must exceed n_concepts * signature_count + 2");
  require(std::isfinite(noise_sigma) && noise_sigma >= 0.0,
          "noise_sigma must be a nonnegative finite real");
  require(eval_fraction >= 0.0 && eval_fraction < 1.0,
          "eval_fraction must lie in [0, 1)");
  require(examples_per_concept - eval_per_concept() >= 1,
          "eval_fraction leaves no training examples per concept");
}

int GenConfig::eval_per_concept() const {
  return static_cast<int>(std::lround(eval_fraction * examples_per_concept));
}

const Example& SyntheticDataset::example(std::size_t index) const {
  if (index >= examples_.size()) {
    throw std::out_of_range("example index " + std::to_string(index) +
                            " out of range (size " +
                            std::to_string(examples_.size()) + ")");
  }
  return examples_[index];
}

std::vector<std::pair<std::size_t, std::size_t>> SyntheticDataset::pairs() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(examples_.size());
  for (const auto& e : examples_) out.emplace_back(e.index, e.index);
  return out;
}

Eigen::MatrixXd SyntheticDataset::image_rows(std::span<const std::size_t> indices) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(indices.size()), config_.d_img);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = example(indices[r]).image_features.transpose();
  }
  return out;
}

TokenBatch SyntheticDataset::text_rows(std::span<const std::size_t> indices) const {
  TokenBatch out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(example(i).text_tokens);
  return out;
}

bool SyntheticDataset::operator==(const SyntheticDataset& other) const {
  if (!(config_ == other.config_) || examples_.size() != other.examples_.size() ||
      concepts_.size() != other.concepts_.size() || concept_of_ != other.concept_of_) {
    return false;
  }
  if (image_map_.rows() != other.image_map_.rows() ||
      image_map_.cols() != other.image_map_.cols() || image_map_ != other.image_map_) {
    return false;
  }
  for (std::size_t c = 0; c < concepts_.size(); ++c) {
    const auto& a = concepts_[c];
    const auto& b = other.concepts_[c];
    if (a.id != b.id || a.signature_tokens != b.signature_tokens ||
        a.center.size() != b.center.size() || a.center != b.center) {
      return false;
    }
  }
  for (std::size_t i = 0; i < examples_.size(); ++i) {
    const auto& a = examples_[i];
    const auto& b = other.examples_[i];
    if (a.index != b.index || a.held_out != b.held_out || a.text_tokens != b.text_tokens ||
        a.image_features.size() != b.image_features.size() ||
        a.image_features != b.image_features) {
      return false;
    }
  }
  return true;
}

void SyntheticDataset::rebuild_splits() {
  train_.clear();
  eval_.clear();
  for (const auto& e : examples_) (e.held_out ? eval_ : train_).push_back(e.index);
}

int GroundTruth::concept_of(std::size_t index) const {
  if (index >= ds_->concept_of_.size()) {
    throw std::out_of_range("example index " + std::to_string(index) + " out of range");
  }
  return ds_->concept_of_[index];
}

const Concept& GroundTruth::concept_info(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= ds_->concepts_.size()) {
    throw std::out_of_range("concept id out of range");
  }
  return ds_->concepts_[static_cast<std::size_t>(id)];
}

SyntheticDataset generate(const GenConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> unit_normal(0.0, 1.0);

  SyntheticDataset ds;
  ds.config_ = config;

  // Token pool: everything except [PAD] and [MASK]; signatures come first.
  std::vector<TokenId> pool(static_cast<std::size_t>(config.vocab_size) - kFirstContentToken);
  std::iota(pool.begin(), pool.end(), kFirstContentToken);
  std::shuffle(pool.begin(), pool.end(), rng);
  const auto n_sig = static_cast<std::size_t>(config.n_concepts) *
                     static_cast<std::size_t>(config.signature_count);
  std::vector<TokenId> fillers(pool.begin() + static_cast<std::ptrdiff_t>(n_sig), pool.end());
  std::sort(fillers.begin(), fillers.end());

  ds.concepts_.resize(static_cast<std::size_t>(config.n_concepts));
  for (int c = 0; c < config.n_concepts; ++c) {
    auto& concept_ = ds.concepts_[static_cast<std::size_t>(c)];
    concept_.id = c;
    concept_.center.resize(config.d_lat);
    for (auto& x : concept_.center) x = unit_normal(rng);
    const auto first = static_cast<std::size_t>(c) * static_cast<std::size_t>(config.signature_count);
    concept_.signature_tokens.assign(
        pool.begin() + static_cast<std::ptrdiff_t>(first),
        pool.begin() + static_cast<std::ptrdiff_t>(first + static_cast<std::size_t>(config.signature_count)));
  }

  const double map_scale = 1.0 / std::sqrt(static_cast<double>(config.d_lat));
  ds.image_map_.resize(config.d_img, config.d_lat);
  for (Eigen::Index r = 0; r < ds.image_map_.rows(); ++r) {
    for (Eigen::Index k = 0; k < ds.image_map_.cols(); ++k) {
      ds.image_map_(r, k) = map_scale * unit_normal(rng);
    }
  }

  std::uniform_int_distribution<std::size_t> pick_filler(0, fillers.size() - 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  const int n_eval = config.eval_per_concept();

  struct Draft {
    Example ex;
    int concept_id;
  };
  std::vector<Draft> drafts;
  drafts.reserve(static_cast<std::size_t>(config.n_concepts * config.examples_per_concept));
  std::vector<std::size_t> positions(static_cast<std::size_t>(config.seq_len));
  for (int c = 0; c < config.n_concepts; ++c) {
    const auto& concept_ = ds.concepts_[static_cast<std::size_t>(c)];
    const Eigen::VectorXd projected = ds.image_map_ * concept_.center;
    for (int j = 0; j < config.examples_per_concept; ++j) {
      Draft d;
      d.concept_id = c;
      d.ex.image_features = projected;
      if (config.noise_sigma > 0.0) {
        for (auto& x : d.ex.image_features) x += config.noise_sigma * noise(rng);
      }
      d.ex.text_tokens.resize(static_cast<std::size_t>(config.seq_len));
      for (auto& t : d.ex.text_tokens) t = fillers[pick_filler(rng)];
      std::iota(positions.begin(), positions.end(), std::size_t{0});
      std::shuffle(positions.begin(), positions.end(), rng);
      for (std::size_t s = 0; s < concept_.signature_tokens.size(); ++s) {
        d.ex.text_tokens[positions[s]] = concept_.signature_tokens[s];
      }
      d.ex.held_out = j >= config.examples_per_concept - n_eval;
      drafts.push_back(std::move(d));
    }
  }

  // Shuffle so that example indices carry no concept information.
  std::shuffle(drafts.begin(), drafts.end(), rng);
  ds.examples_.reserve(drafts.size());
  ds.concept_of_.reserve(drafts.size());
  for (std::size_t i = 0; i < drafts.size(); ++i) {
    drafts[i].ex.index = i;
    ds.concept_of_.push_back(drafts[i].concept_id);
    ds.examples_.push_back(std::move(drafts[i].ex));
  }
  ds.rebuild_splits();
  return ds;
}

bool is_true_connection(const SyntheticDataset& ds, std::size_t image_index,
                        std::size_t text_index) {
  const GroundTruth truth(ds);
  return truth.concept_of(image_index) == truth.concept_of(text_index);
}

std::string serialize_dataset(const SyntheticDataset& ds) {
  const GroundTruth truth(ds);
  std::ostringstream out;
  const auto& cfg = ds.config();

  json image_map = json::array();
  for (Eigen::Index r = 0; r < ds.image_map_.rows(); ++r) {
    image_map.push_back(vec_to_json(ds.image_map_.row(r).transpose()));
  }
  json header{{"type", "header"},
              {"format", kFormatTag},
              {"version", kFormatVersion},
              {"seed", cfg.seed},
              {"config", config_to_json(cfg)},
              {"n_concepts", truth.n_concepts()},
              {"n_examples", ds.size()},
              {"image_map", std::move(image_map)}};
  out << header.dump() << '\n';

  for (std::size_t c = 0; c < truth.n_concepts(); ++c) {
    const auto& info = truth.concept_info(static_cast<int>(c));
    json rec{{"type", "concept"},
             {"id", info.id},
             {"center", vec_to_json(info.center)},
             {"signature_tokens", info.signature_tokens}};
    out << rec.dump() << '\n';
  }
  for (const auto& e : ds.examples()) {
    json rec{{"type", "example"},
             {"index", e.index},
             {"concept_id", truth.concept_of(e.index)},
             {"held_out", e.held_out},
             {"image_features", vec_to_json(e.image_features)},
             {"text_tokens", e.text_tokens}};
    out << rec.dump() << '\n';
  }
  return out.str();
}

SyntheticDataset parse_dataset(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  auto next_record = [&](const char* expected_type) {
    if (!std::getline(in, line)) {
      throw DatasetFormatError(std::string("truncated dataset: missing ") + expected_type +
                               " record");
    }
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DatasetFormatError(std::string("malformed ") + expected_type +
                               " record: " + e.what());
    }
    if (!rec.is_object() || rec.value("type", std::string()) != expected_type) {
      throw DatasetFormatError(std::string("expected ") + expected_type + " record");
    }
    return rec;
  };

  SyntheticDataset ds;
  try {
    const json header = next_record("header");
    if (header.at("format").get<std::string>() != kFormatTag ||
        header.at("version").get<int>() != kFormatVersion) {
      throw DatasetFormatError("unsupported dataset format");
    }
    ds.config_ = config_from_json(header.at("config"));
    if (header.at("seed").get<std::uint64_t>() != ds.config_.seed) {
      throw DatasetFormatError("header seed disagrees with config seed");
    }
    try {
      ds.config_.validate();
    } catch (const std::invalid_argument& e) {
      throw DatasetFormatError(std::string("invalid config in header: ") + e.what());
    }
    const auto n_concepts = header.at("n_concepts").get<std::size_t>();
    const auto n_examples = header.at("n_examples").get<std::size_t>();
    if (n_concepts != static_cast<std::size_t>(ds.config_.n_concepts) ||
        n_examples != n_concepts * static_cast<std::size_t>(ds.config_.examples_per_concept)) {
      throw DatasetFormatError("record counts disagree with config");
    }

    ds.concepts_.resize(n_concepts);
    for (std::size_t c = 0; c < n_concepts; ++c) {
      const json rec = next_record("concept");
      auto& info = ds.concepts_[c];
      info.id = rec.at("id").get<int>();
      if (info.id != static_cast<int>(c)) throw DatasetFormatError("concept ids out of order");
      info.center = json_to_vec(rec.at("center"), ds.config_.d_lat);
      info.signature_tokens = rec.at("signature_tokens").get<std::vector<TokenId>>();
    }

    const json& image_map = header.at("image_map");
    if (!image_map.is_array() ||
        image_map.size() != static_cast<std::size_t>(ds.config_.d_img)) {
      throw DatasetFormatError("image_map shape disagrees with config");
    }
    ds.image_map_.resize(ds.config_.d_img, ds.config_.d_lat);
    for (Eigen::Index r = 0; r < ds.image_map_.rows(); ++r) {
      ds.image_map_.row(r) =
          json_to_vec(image_map[static_cast<std::size_t>(r)], ds.config_.d_lat).transpose();
    }

    ds.examples_.resize(n_examples);
    ds.concept_of_.resize(n_examples);
    for (std::size_t i = 0; i < n_examples; ++i) {
      const json rec = next_record("example");
      auto& e = ds.examples_[i];
      e.index = rec.at("index").get<std::size_t>();
      if (e.index != i) throw DatasetFormatError("example indices out of order");
      const int cid = rec.at("concept_id").get<int>();
      if (cid < 0 || static_cast<std::size_t>(cid) >= n_concepts) {
        throw DatasetFormatError("concept_id out of range");
      }
      ds.concept_of_[i] = cid;
      e.held_out = rec.at("held_out").get<bool>();
      e.image_features = json_to_vec(rec.at("image_features"), ds.config_.d_img);
      e.text_tokens = rec.at("text_tokens").get<TokenSeq>();
      if (e.text_tokens.size() != static_cast<std::size_t>(ds.config_.seq_len)) {
        throw DatasetFormatError("text length disagrees with seq_len");
      }
      for (auto t : e.text_tokens) {
        if (t >= static_cast<TokenId>(ds.config_.vocab_size)) {
          throw DatasetFormatError("token id out of vocabulary");
        }
      }
    }
  } catch (const json::exception& e) {
    throw DatasetFormatError(std::string("malformed dataset record: ") + e.what());
  }
  if (std::getline(in, line) && !line.empty()) {
    throw DatasetFormatError("trailing data after last example record");
  }
  ds.rebuild_splits();
  return ds;
}

void save(const SyntheticDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << serialize_dataset(ds);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

SyntheticDataset load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string() + " for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str());
}

}  // namespace cosmo::synthdata
