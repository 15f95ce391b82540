#include "cosmo/ecm.hpp"

#include <algorithm>
#include <stdexcept>

namespace cosmo::ecm {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double pair_uniform(std::uint64_t seed, std::size_t a, std::size_t b) {
  const std::uint64_t h = splitmix64(splitmix64(seed ^ splitmix64(a)) ^ b);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

std::vector<double> row_of(const Matrix& m, std::size_t r, std::size_t width) {
  std::vector<double> row(width);
  for (std::size_t c = 0; c < width; ++c) {
    row[c] = m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  }
  return row;
}

void check_square(const encoder::SimilarityMatrices& sims, std::size_t b) {
  if (static_cast<std::size_t>(sims.i2t.rows()) != b || sims.i2t.cols() < sims.i2t.rows() ||
      sims.t2i.rows() != sims.i2t.rows() || sims.t2i.cols() != sims.i2t.cols()) {
    throw std::invalid_argument("ecm_step: similarity shape does not match batch");
  }
  if (b < 2) throw std::invalid_argument("ecm_step: batch needs at least 2 examples");
}

}  // namespace

void EcmConfig::validate() const {
  if (!(neutral_floor >= 0.0 && neutral_floor < tau_thr && tau_thr <= 1.0)) {
    throw std::invalid_argument("EcmConfig: need 0 <= neutral_floor < tau_thr <= 1");
  }
}

std::string_view to_string(Decision d) {
  switch (d) {
    case Decision::Positive: return "positive";
    case Decision::Neutral: return "neutral";
    case Decision::Negative: return "negative";
  }
  return "unknown";
}

ConnectionVerdict classify(double prob, const EcmConfig& config) {
  if (!(prob >= 0.0 && prob <= 1.0)) throw std::invalid_argument("classify: prob outside [0, 1]");
  ConnectionVerdict v{prob, Decision::Negative};
  if (prob > config.tau_thr) {
    v.decision = Decision::Positive;
  } else if (prob > config.neutral_floor) {
    v.decision = Decision::Neutral;
  }
  return v;
}

std::size_t select_hard_negative(std::span<const double> row, std::size_t pair_pos,
                                 std::span<const std::size_t> exclude) {
  if (row.size() < 2) throw std::invalid_argument("select_hard_negative: row width < 2");
  std::size_t best = row.size();
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (j == pair_pos || std::find(exclude.begin(), exclude.end(), j) != exclude.end()) continue;
    if (best == row.size() || row[j] > row[best]) best = j;
  }
  if (best == row.size()) throw std::invalid_argument("select_hard_negative: every candidate excluded");
  return best;
}

void OracleNoise::validate() const {
  if (!(p_hi >= 0.0 && p_hi <= 1.0 && p_lo >= 0.0 && p_lo <= 1.0)) {
    throw std::invalid_argument("OracleNoise: probabilities must lie in [0, 1]");
  }
  if (!(flip_eps >= 0.0 && flip_eps <= 1.0)) throw std::invalid_argument("OracleNoise: flip_eps outside [0, 1]");
}

OracleDiscriminator::OracleDiscriminator(const synthdata::SyntheticDataset& ds, OracleNoise noise)
    : ds_(&ds), noise_(noise) {
  noise_.validate();
}

double OracleDiscriminator::prob(std::size_t image_index, std::size_t text_index) const {
  bool match = synthdata::is_true_connection(*ds_, image_index, text_index);
  if (noise_.flip_eps > 0.0 && pair_uniform(noise_.seed, image_index, text_index) < noise_.flip_eps) {
    match = !match;
  }
  return match ? noise_.p_hi : noise_.p_lo;
}

ConnectionVerdict con_d_oracle(const synthdata::SyntheticDataset& ds, std::size_t image_index,
                               std::size_t text_index, const OracleNoise& noise,
                               const EcmConfig& config) {
  return classify(OracleDiscriminator(ds, noise).prob(image_index, text_index), config);
}

TrainedDiscriminator::TrainedDiscriminator(const synthdata::SyntheticDataset& ds, ModelParams params)
    : ds_(&ds), params_(std::move(params)) {
  params_.validate();
}

double TrainedDiscriminator::prob(std::size_t image_index, std::size_t text_index) const {
  const std::size_t img[] = {image_index};
  const std::size_t txt[] = {text_index};
  return encoder::itm_match_prob(params_, ds_->image_rows(img), ds_->text_rows(txt))(0);
}

EcmStats& EcmStats::operator+=(const EcmStats& o) {
  probes += o.probes;
  conversions_i2t += o.conversions_i2t;
  conversions_t2i += o.conversions_t2i;
  neutrals += o.neutrals;
  resamples += o.resamples;
  negatives += o.negatives;
  role_conflicts += o.role_conflicts;
  return *this;
}

EcmOutcome ecm_step(std::span<const std::size_t> example_indices,
                    const encoder::SimilarityMatrices& sims,
                    const ConnectionDiscriminator& con_d, const EcmConfig& config) {
  config.validate();
  const std::size_t b = example_indices.size();
  check_square(sims, b);
  EcmOutcome out;
  for (std::size_t i = 0; i < b; ++i) out.itm_positives.push_back({i, i});

  for (AnchorSide side : {AnchorSide::Image, AnchorSide::Text}) {
    const Matrix& s = side == AnchorSide::Image ? sims.i2t : sims.t2i;
    for (std::size_t a = 0; a < b; ++a) {
      const auto row = row_of(s, a, b);  // in-batch candidates only
      const std::size_t k = select_hard_negative(row, a);
      const PairRef pair = side == AnchorSide::Image ? PairRef{a, k} : PairRef{k, a};
      ++out.stats.probes;
      const auto verdict =
          classify(con_d.prob(example_indices[pair.img], example_indices[pair.txt]), config);
      switch (verdict.decision) {
        case Decision::Positive:
          if (side == AnchorSide::Image) {
            out.conversions_i2t.push_back({a, k});
            ++out.stats.conversions_i2t;
          } else {
            out.conversions_t2i.push_back({a, k});
            ++out.stats.conversions_t2i;
          }
          out.itm_positives.push_back(pair);
          out.mlm_additions.push_back(pair);
          break;
        case Decision::Neutral: {
          ++out.stats.neutrals;
          const std::size_t skip[] = {k};
          if (b < 3) break;  // no second-hardest candidate exists
          const std::size_t k2 = select_hard_negative(row, a, skip);
          const PairRef p2 = side == AnchorSide::Image ? PairRef{a, k2} : PairRef{k2, a};
          out.itm_negatives.push_back({p2, side, true});
          ++out.stats.resamples;
          break;
        }
        case Decision::Negative:
          out.itm_negatives.push_back({pair, side, false});
          break;
      }
    }
  }
  // A re-sampled negative may coincide with a pair another anchor converted.
  std::erase_if(out.itm_negatives, [&](const MinedNegative& n) {
    const bool conflict = std::find(out.itm_positives.begin(), out.itm_positives.end(), n.pair) !=
                          out.itm_positives.end();
    if (conflict) ++out.stats.role_conflicts;
    return conflict;
  });
  out.stats.negatives = out.itm_negatives.size();
  return out;
}

EcmOutcome hard_negatives_only(const encoder::SimilarityMatrices& sims) {
  const auto b = static_cast<std::size_t>(sims.i2t.rows());
  if (b < 2) throw std::invalid_argument("hard_negatives_only: batch needs at least 2 examples");
  EcmOutcome out;
  for (std::size_t i = 0; i < b; ++i) out.itm_positives.push_back({i, i});
  for (std::size_t a = 0; a < b; ++a) {
    const std::size_t k = select_hard_negative(row_of(sims.i2t, a, b), a);
    out.itm_negatives.push_back({{a, k}, AnchorSide::Image, false});
  }
  for (std::size_t a = 0; a < b; ++a) {
    const std::size_t k = select_hard_negative(row_of(sims.t2i, a, b), a);
    out.itm_negatives.push_back({{k, a}, AnchorSide::Text, false});
  }
  out.stats.negatives = out.itm_negatives.size();
  return out;
}

}  // namespace cosmo::ecm
