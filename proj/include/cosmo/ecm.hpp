#pragma once

// Connection mining: per-anchor hardest in-batch negative, a Con-D probe, and
// the Positive / Neutral / Negative handling that yields ITC label
// conversions, ITM roles and extra MLM pairs.

#include "cosmo/encoder.hpp"
#include "cosmo/labelkit.hpp"
#include "cosmo/params.hpp"
#include "cosmo/synthdata.hpp"

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

namespace cosmo::ecm {

struct EcmConfig {
  double tau_thr = 0.8;
  double neutral_floor = 0.5;

  // Throws unless 0 <= neutral_floor < tau_thr <= 1.
  void validate() const;
  bool operator==(const EcmConfig&) const = default;
};

enum class Decision { Positive, Neutral, Negative };
std::string_view to_string(Decision d);

struct ConnectionVerdict {
  double prob = 0.0;
  Decision decision = Decision::Negative;
};

// Positive iff prob > tau_thr; Neutral iff neutral_floor < prob <= tau_thr.
ConnectionVerdict classify(double prob, const EcmConfig& config);

// argmax over j not in {pair_pos} u exclude, ties to the lowest index.
// Throws std::invalid_argument if every candidate is excluded.
std::size_t select_hard_negative(std::span<const double> row, std::size_t pair_pos,
                                 std::span<const std::size_t> exclude = {});

// Matching probability for (image of example i, text of example t).
class ConnectionDiscriminator {
 public:
  virtual ~ConnectionDiscriminator() = default;
  virtual double prob(std::size_t image_index, std::size_t text_index) const = 0;
};

struct OracleNoise {
  double p_hi = 0.95;
  double p_lo = 0.05;
  // Per-pair probability of swapping p_hi and p_lo (deterministic per seed).
  double flip_eps = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const OracleNoise&) const = default;
};

// Ground-truth scorer. Only this class (and eval code) sees concept ids.
class OracleDiscriminator final : public ConnectionDiscriminator {
 public:
  OracleDiscriminator(const synthdata::SyntheticDataset& ds, OracleNoise noise = {});
  double prob(std::size_t image_index, std::size_t text_index) const override;

 private:
  const synthdata::SyntheticDataset* ds_;
  OracleNoise noise_;
};

ConnectionVerdict con_d_oracle(const synthdata::SyntheticDataset& ds, std::size_t image_index,
                               std::size_t text_index, const OracleNoise& noise = {},
                               const EcmConfig& config = {});

// Frozen ITM head of a separately trained model.
class TrainedDiscriminator final : public ConnectionDiscriminator {
 public:
  TrainedDiscriminator(const synthdata::SyntheticDataset& ds, ModelParams params);
  double prob(std::size_t image_index, std::size_t text_index) const override;
  const ModelParams& params() const { return params_; }

 private:
  const synthdata::SyntheticDataset* ds_;
  const ModelParams params_;
};

// Returns the same probability for every pair (tests and degenerate bands).
class ConstantDiscriminator final : public ConnectionDiscriminator {
 public:
  explicit ConstantDiscriminator(double p) : p_(p) {}
  double prob(std::size_t, std::size_t) const override { return p_; }

 private:
  double p_;
};

enum class AnchorSide { Image, Text };

// Batch-local positions of an (image, text) pair.
struct PairRef {
  std::size_t img = 0;
  std::size_t txt = 0;
  bool operator==(const PairRef&) const = default;
};

struct MinedNegative {
  PairRef pair;
  AnchorSide side = AnchorSide::Image;
  bool resampled = false;  // second hardest after a Neutral probe
  bool operator==(const MinedNegative&) const = default;
};

struct EcmStats {
  std::size_t probes = 0;
  std::size_t conversions_i2t = 0;
  std::size_t conversions_t2i = 0;
  std::size_t neutrals = 0;
  std::size_t resamples = 0;
  std::size_t negatives = 0;
  std::size_t role_conflicts = 0;  // re-sampled negatives dropped for being positives

  EcmStats& operator+=(const EcmStats& o);
};

struct EcmOutcome {
  std::vector<labelkit::Conversion> conversions_i2t;
  std::vector<labelkit::Conversion> conversions_t2i;
  // Original pairs (b, b) first, then converted pairs.
  std::vector<PairRef> itm_positives;
  std::vector<MinedNegative> itm_negatives;
  std::vector<PairRef> mlm_additions;
  EcmStats stats;
};

// `example_indices[b]` maps batch position b to the dataset; sims holds the
// in-batch B x B similarity matrices.
EcmOutcome ecm_step(std::span<const std::size_t> example_indices,
                    const encoder::SimilarityMatrices& sims,
                    const ConnectionDiscriminator& con_d, const EcmConfig& config);

// Plain hardest-negative mining with no probe (one negative per anchor and
// direction).
EcmOutcome hard_negatives_only(const encoder::SimilarityMatrices& sims);

}  // namespace cosmo::ecm
