#pragma once

// ITC / S-ITC / ITM / MLM losses with analytic gradients, their sum, and a
// central finite-difference checker.

#include "cosmo/autodiff.hpp"
#include "cosmo/labelkit.hpp"
#include "cosmo/params.hpp"
#include "cosmo/synthdata.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cosmo::losses {

using synthdata::TokenBatch;
using synthdata::TokenId;

struct LossValue {
  double value = 0.0;
  ParamBundle grads;
};

// Row-aligned image features and token sequences (row b of each is pair b).
struct BatchInputs {
  Matrix image_features;
  TokenBatch tokens;

  std::size_t size() const { return tokens.size(); }
  void validate() const;
};

// -sum target * log(max(prob, 1e-12)). Both rows must be distributions
// (sum 1 within 1e-9, no negative entries).
double cross_entropy(std::span<const double> target, std::span<const double> prob);

// One contrastive term. Label widths are B, or B + Q when queue rows are
// attached (queue rows are constants, e.g. momentum-encoder outputs).
struct ItcTerm {
  BatchInputs batch;
  labelkit::LabelMatrix i2t;
  labelkit::LabelMatrix t2i;
  Matrix queue_txt;  // Q x d_proj, may be empty
  Matrix queue_img;  // Q x d_proj, may be empty
  // false entries are removed from the softmax (eliminate-only mode).
  std::optional<ad::BoolMatrix> keep_i2t;
  std::optional<ad::BoolMatrix> keep_t2i;
};

// 0.5 * mean_b [CE(y_i2t_b, p_i2t_b) + CE(y_t2i_b, p_t2i_b)], softmax of
// cosine / temperature.
LossValue itc_loss(const ModelParams& params, const ItcTerm& term);

struct SitcOptions {
  double alpha = 0.5;
  std::vector<labelkit::Conversion> conversions_i2t;
  std::vector<labelkit::Conversion> conversions_t2i;
  // Instead of relabeling, drop converted columns from the softmax and
  // smooth over the remaining N - c entries.
  bool eliminate = false;
};

// Builds the ECM-corrected, smoothed ItcTerm for an in-batch (width B) loss.
ItcTerm make_sitc_term(const BatchInputs& batch, const SitcOptions& options);
LossValue s_itc_loss(const ModelParams& params, const BatchInputs& batch,
                     const SitcOptions& options);

struct ItmBatch {
  Matrix image_features;  // P x d_img
  TokenBatch tokens;      // P sequences
  std::vector<bool> positives;

  std::size_t size() const { return positives.size(); }
};

// Mean two-class CE over the entries; column 0 of the head is "matched".
LossValue itm_loss(const ModelParams& params, const ItmBatch& batch);

struct MlmBatch {
  TokenBatch inputs;  // masked copies of the texts
  std::vector<std::vector<std::size_t>> mask_positions;
  std::vector<std::vector<TokenId>> targets;
  Matrix image_features;  // row r conditions text r

  std::size_t size() const { return inputs.size(); }
  std::size_t masked_count() const;
  void validate() const;
};

// Each non-[PAD] position is masked with probability mask_prob (replaced by
// [MASK]); a text with no draw gets one uniformly chosen position masked.
MlmBatch make_mlm_batch(const TokenBatch& texts, const Matrix& image_features, double mask_prob,
                        std::mt19937_64& rng);
// Concatenates rows (original pairs first, then ECM additions).
MlmBatch concat_mlm(const MlmBatch& a, const MlmBatch& b);

// Mean CE over masked positions of softmax([ctx | img_emb] * mlm_head), where
// ctx is the mean-pooled embedding of the masked text.
LossValue mlm_loss(const ModelParams& params, const MlmBatch& batch);

struct TotalInputs {
  std::optional<ItcTerm> itc;
  std::optional<ItmBatch> itm;
  std::optional<MlmBatch> mlm;
};

struct TotalLoss {
  LossValue total;
  double itc = 0.0;
  double itm = 0.0;
  double mlm = 0.0;
};

// Sum of the present components; grads add element-wise.
TotalLoss total_loss(const ModelParams& params, const TotalInputs& inputs);

struct FdOptions {
  double h = 1e-5;
  double tol = 1e-4;
  // Coordinates sampled per tensor (all of them if the tensor is smaller).
  std::size_t coords_per_tensor = 16;
  // |a - n| / max(|a|, |n|, denom_floor)
  double denom_floor = 1e-6;
  std::uint64_t seed = 0;
};

struct FdReport {
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
  bool passed = false;
  std::string worst;  // "tensor[r,c] analytic=.. numeric=.."
};

using LossFn = std::function<LossValue(const ModelParams&)>;

// Compares analytic grads (from one call at params) to central differences.
// The analytic bundle may be supplied to test a corrupted gradient.
FdReport fd_gradient_check(const LossFn& fn, const ModelParams& params, const FdOptions& options,
                           const ParamBundle* analytic_override = nullptr);

}  // namespace cosmo::losses
