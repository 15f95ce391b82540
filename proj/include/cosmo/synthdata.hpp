#pragma once

// Synthetic paired image-text data with planted latent concepts.
//
// Every example belongs to exactly one concept. Only the (i, i) pairs are
// recorded as positives, so every same-concept (i, j), i != j, combination
// is a missing positive connection with exact ground truth. Concept ids are
// kept private to SyntheticDataset; training code sees features, tokens and
// the split flag only. Ground truth is reachable through GroundTruth and
// is_true_connection, which are meant for oracle and evaluation code.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cosmo::synthdata {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;
using TokenBatch = std::vector<TokenSeq>;

inline constexpr TokenId kPadToken = 0;
inline constexpr TokenId kMaskToken = 1;
inline constexpr TokenId kFirstContentToken = 2;

struct GenConfig {
  int n_concepts = 64;
  int examples_per_concept = 8;
  int d_lat = 16;
  int d_img = 32;
  int vocab_size = 256;
  int seq_len = 12;
  double noise_sigma = 0.3;
  int signature_count = 2;
  // Fraction of each concept's examples held out for retrieval evaluation.
  double eval_fraction = 0.2;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
  int eval_per_concept() const;

  bool operator==(const GenConfig&) const = default;
};

struct Concept {
  int id = 0;
  Eigen::VectorXd center;
  std::vector<TokenId> signature_tokens;
};

struct Example {
  std::size_t index = 0;
  Eigen::VectorXd image_features;
  TokenSeq text_tokens;
  bool held_out = false;
};

class DatasetFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SyntheticDataset {
 public:
  const GenConfig& config() const { return config_; }
  std::size_t size() const { return examples_.size(); }
  const Example& example(std::size_t index) const;
  const std::vector<Example>& examples() const { return examples_; }
  // Recorded pairs; image i is paired with text i.
  std::vector<std::pair<std::size_t, std::size_t>> pairs() const;

  const std::vector<std::size_t>& train_indices() const { return train_; }
  const std::vector<std::size_t>& eval_indices() const { return eval_; }

  // Stacks image features / token sequences for the given examples.
  Eigen::MatrixXd image_rows(std::span<const std::size_t> indices) const;
  TokenBatch text_rows(std::span<const std::size_t> indices) const;

  bool operator==(const SyntheticDataset& other) const;

 private:
  friend class GroundTruth;
  friend SyntheticDataset generate(const GenConfig& config);
  friend SyntheticDataset parse_dataset(std::string_view text);
  friend std::string serialize_dataset(const SyntheticDataset& ds);

  void rebuild_splits();

  GenConfig config_;
  std::vector<Concept> concepts_;
  Eigen::MatrixXd image_map_;
  std::vector<Example> examples_;
  std::vector<int> concept_of_;
  std::vector<std::size_t> train_;
  std::vector<std::size_t> eval_;
};

// Oracle / evaluation view of the planted concepts.
class GroundTruth {
 public:
  explicit GroundTruth(const SyntheticDataset& ds) : ds_(&ds) {}
  int concept_of(std::size_t index) const;
  const Concept& concept_info(int id) const;
  std::size_t n_concepts() const { return ds_->concepts_.size(); }

 private:
  const SyntheticDataset* ds_;
};

// Deterministic for a fixed config (including seed).
SyntheticDataset generate(const GenConfig& config);

// True iff image `image_index` and text `text_index` share a concept.
// Throws std::out_of_range for invalid indices.
bool is_true_connection(const SyntheticDataset& ds, std::size_t image_index,
                        std::size_t text_index);

// JSONL: a header record (config, seed, image map), one record per concept,
// then one record per example.
std::string serialize_dataset(const SyntheticDataset& ds);
SyntheticDataset parse_dataset(std::string_view text);
void save(const SyntheticDataset& ds, const std::filesystem::path& path);
SyntheticDataset load(const std::filesystem::path& path);

}  // namespace cosmo::synthdata
