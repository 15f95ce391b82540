#include "cosmo/retrieval.hpp"

#include "cosmo/encoder.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace cosmo::retrieval {

std::string_view to_string(RelevanceMode m) {
  return m == RelevanceMode::Strict ? "strict" : "concept";
}

RelevanceMode parse_relevance_mode(std::string_view s) {
  if (s == "strict" || s == "Strict") return RelevanceMode::Strict;
  if (s == "concept" || s == "ConceptLevel" || s == "concept_level") return RelevanceMode::ConceptLevel;
  throw std::invalid_argument("unknown relevance mode '" + std::string(s) + "' (strict|concept)");
}

double irtr_avg(std::span<const double, 6> recalls) {
  return std::accumulate(recalls.begin(), recalls.end(), 0.0) / 6.0;
}

std::vector<std::size_t> rank_desc(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

namespace {

std::vector<double> row_vec(const Matrix& m, Eigen::Index r) {
  std::vector<double> v(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) v[static_cast<std::size_t>(c)] = m(r, c);
  return v;
}

// Re-orders the first k entries of `order` by ITM probability (stable, so
// equal probabilities keep their ITC order).
void rerank_head(std::vector<std::size_t>& order, std::size_t k, std::span<const double> itm) {
  std::stable_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                   [&](std::size_t a, std::size_t b) { return itm[a] > itm[b]; });
}

}  // namespace

RankedLists rank_embeddings(const Matrix& img, const Matrix& txt) {
  if (img.rows() != txt.rows() || img.cols() != txt.cols()) {
    throw std::invalid_argument("rank_embeddings: shape mismatch");
  }
  const Matrix s = img * txt.transpose();
  const Matrix st = s.transpose();
  const auto n = static_cast<std::size_t>(s.rows());
  RankedLists out;
  out.i2t.resize(n);
  out.t2i.resize(n);
  for (std::size_t q = 0; q < n; ++q) {
    out.i2t[q] = rank_desc(row_vec(s, static_cast<Eigen::Index>(q)));
    out.t2i[q] = rank_desc(row_vec(st, static_cast<Eigen::Index>(q)));
  }
  return out;
}

RankedLists rank_split(const ModelParams& params, const synthdata::SyntheticDataset& ds,
                       std::span<const std::size_t> split, std::size_t k_rerank) {
  const std::size_t n = split.size();
  if (n == 0) throw std::invalid_argument("retrieval_eval: empty split");
  if (k_rerank > n) {
    throw std::invalid_argument("retrieval_eval: k_rerank " + std::to_string(k_rerank) +
                                " exceeds split size " + std::to_string(n));
  }
  const Matrix feats = ds.image_rows(split);
  const auto texts = ds.text_rows(split);
  const Matrix img = encoder::encode_images(params, feats);
  const Matrix txt = encoder::encode_texts(params, texts);
  RankedLists out = rank_embeddings(img, txt);
  if (k_rerank == 0) return out;

  // Score each query's top-k candidates with the ITM head, batched.
  auto rerank = [&](std::vector<std::vector<std::size_t>>& lists, bool image_query) {
    Matrix pf(static_cast<Eigen::Index>(n * k_rerank), feats.cols());
    synthdata::TokenBatch pt;
    pt.reserve(n * k_rerank);
    for (std::size_t q = 0; q < n; ++q) {
      for (std::size_t r = 0; r < k_rerank; ++r) {
        const std::size_t c = lists[q][r];
        const std::size_t im = image_query ? q : c;
        const std::size_t tx = image_query ? c : q;
        pf.row(static_cast<Eigen::Index>(q * k_rerank + r)) = feats.row(static_cast<Eigen::Index>(im));
        pt.push_back(texts[tx]);
      }
    }
    const Vector p = encoder::itm_match_prob(params, pf, pt);
    std::vector<double> itm(n, 0.0);
    for (std::size_t q = 0; q < n; ++q) {
      for (std::size_t r = 0; r < k_rerank; ++r) {
        itm[lists[q][r]] = p(static_cast<Eigen::Index>(q * k_rerank + r));
      }
      rerank_head(lists[q], k_rerank, itm);
    }
  };
  rerank(out.i2t, true);
  rerank(out.t2i, false);
  return out;
}

RetrievalReport score_rankings(const RankedLists& lists, const synthdata::SyntheticDataset& ds,
                               std::span<const std::size_t> split, RelevanceMode mode) {
  const std::size_t n = split.size();
  if (lists.i2t.size() != n || lists.t2i.size() != n) {
    throw std::invalid_argument("score_rankings: ranking count != split size");
  }
  const synthdata::GroundTruth gt(ds);
  auto relevant = [&](std::size_t q, std::size_t c) {
    if (mode == RelevanceMode::Strict) return q == c;
    return gt.concept_of(split[q]) == gt.concept_of(split[c]);
  };
  auto recalls = [&](const std::vector<std::vector<std::size_t>>& ls, double& r1, double& r5,
                     double& r10) {
    std::size_t h1 = 0, h5 = 0, h10 = 0;
    for (std::size_t q = 0; q < n; ++q) {
      std::size_t first = n;
      for (std::size_t r = 0; r < ls[q].size(); ++r) {
        if (relevant(q, ls[q][r])) {
          first = r;
          break;
        }
      }
      h1 += first < 1;
      h5 += first < 5;
      h10 += first < 10;
    }
    const double scale = 100.0 / static_cast<double>(n);
    r1 = static_cast<double>(h1) * scale;
    r5 = static_cast<double>(h5) * scale;
    r10 = static_cast<double>(h10) * scale;
  };
  RetrievalReport rep;
  rep.mode = mode;
  rep.n = n;
  recalls(lists.i2t, rep.tr_r1, rep.tr_r5, rep.tr_r10);
  recalls(lists.t2i, rep.ir_r1, rep.ir_r5, rep.ir_r10);
  const auto r = rep.recalls();
  rep.irtr_avg = irtr_avg(r);
  return rep;
}

RetrievalReport retrieval_eval(const ModelParams& params, const synthdata::SyntheticDataset& ds,
                               std::span<const std::size_t> split, const RetrievalOptions& options) {
  return score_rankings(rank_split(params, ds, split, options.k_rerank), ds, split, options.mode);
}

}  // namespace cosmo::retrieval
