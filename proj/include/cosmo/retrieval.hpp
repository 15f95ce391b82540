#pragma once

// Two-stage retrieval evaluation: ITC ranking, optional ITM re-rank of the
// top k, recall@{1,5,10} in both directions.

#include "cosmo/params.hpp"
#include "cosmo/synthdata.hpp"

#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace cosmo::retrieval {

enum class RelevanceMode { Strict, ConceptLevel };
std::string_view to_string(RelevanceMode m);
RelevanceMode parse_relevance_mode(std::string_view s);

struct RetrievalOptions {
  // 0 disables the ITM re-rank.
  std::size_t k_rerank = 16;
  RelevanceMode mode = RelevanceMode::ConceptLevel;
  bool operator==(const RetrievalOptions&) const = default;
};

struct RetrievalReport {
  double tr_r1 = 0.0, tr_r5 = 0.0, tr_r10 = 0.0;
  double ir_r1 = 0.0, ir_r5 = 0.0, ir_r10 = 0.0;
  double irtr_avg = 0.0;
  RelevanceMode mode = RelevanceMode::ConceptLevel;
  std::size_t n = 0;

  std::array<double, 6> recalls() const { return {tr_r1, tr_r5, tr_r10, ir_r1, ir_r5, ir_r10}; }
};

// Arithmetic mean of (TR R@1, R@5, R@10, IR R@1, R@5, R@10).
double irtr_avg(std::span<const double, 6> recalls);

// Candidate ordering by descending score, ties to the lower index.
std::vector<std::size_t> rank_desc(std::span<const double> scores);

struct RankedLists {
  std::vector<std::vector<std::size_t>> i2t;  // per image query, text positions
  std::vector<std::vector<std::size_t>> t2i;  // per text query, image positions
};

// Ranking from given unit-norm embeddings (row q of each = split item q).
RankedLists rank_embeddings(const Matrix& img, const Matrix& txt);

// ITC ranking over the split, with top-k ITM re-rank when k_rerank > 0.
// Throws if k_rerank exceeds the split size.
RankedLists rank_split(const ModelParams& params, const synthdata::SyntheticDataset& ds,
                       std::span<const std::size_t> split, std::size_t k_rerank);

// Recalls (percent) from precomputed rankings.
RetrievalReport score_rankings(const RankedLists& lists, const synthdata::SyntheticDataset& ds,
                               std::span<const std::size_t> split, RelevanceMode mode);

RetrievalReport retrieval_eval(const ModelParams& params, const synthdata::SyntheticDataset& ds,
                               std::span<const std::size_t> split, const RetrievalOptions& options);

}  // namespace cosmo::retrieval
