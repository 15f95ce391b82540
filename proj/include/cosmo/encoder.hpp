#pragma once

// Toy dual encoders: one linear projection per modality followed by L2
// normalization, so dot products between outputs are cosine similarities.

#include "cosmo/autodiff.hpp"
#include "cosmo/params.hpp"
#include "cosmo/synthdata.hpp"

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <vector>

namespace cosmo::encoder {

using synthdata::TokenBatch;

// Tape versions, for building losses.
ad::Var encode_images(ad::Tape& tape, const Matrix& image_features);
ad::Var encode_texts(ad::Tape& tape, const TokenBatch& tokens);
// Fused [img | txt | img*txt] -> tanh hidden -> 2 logits (column 0 = matched).
ad::Var itm_logits(ad::Tape& tape, ad::Var img_emb, ad::Var txt_emb);

// Value-only versions. Rows of the result have unit L2 norm.
Matrix encode_images(const ModelParams& params, const Matrix& image_features);
Matrix encode_texts(const ModelParams& params, const TokenBatch& tokens);
// Probability that each (image row r, text row r) pair is matched.
Vector itm_match_prob(const ModelParams& params, const Matrix& image_features,
                      const TokenBatch& tokens);

struct EmbeddingBatch {
  Matrix img;
  Matrix txt;
  std::vector<std::size_t> example_indices;

  std::size_t size() const { return static_cast<std::size_t>(img.rows()); }
  // Throws std::invalid_argument unless shapes agree and rows are unit norm.
  void validate(double tol = 1e-9) const;
};

EmbeddingBatch embed_batch(const ModelParams& params, const synthdata::SyntheticDataset& ds,
                           std::span<const std::size_t> indices);

struct SimilarityMatrices {
  Matrix i2t;  // B x N: image b against text k (batch texts first, then queue)
  Matrix t2i;  // B x N: text b against image k
};

// Queues are stacked below the in-batch rows; both must be given or neither.
SimilarityMatrices similarity_matrix(const EmbeddingBatch& batch,
                                     const Matrix* extra_txt = nullptr,
                                     const Matrix* extra_img = nullptr);

// Numerically stable temperature softmax of one row.
Vector softmax_probs(std::span<const double> scores, double temperature);
// Row-wise softmax of scores / temperature.
Matrix softmax_rows(const Matrix& scores, double temperature);

class EmbeddingQueue {
 public:
  explicit EmbeddingQueue(std::size_t capacity = 0) : capacity_(capacity) {}
  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return rows_.size(); }
  bool full() const { return rows_.size() == capacity_; }
  void push(const Matrix& rows);
  // Oldest first.
  Matrix matrix(Eigen::Index dim) const;
  const std::deque<Vector>& rows() const { return rows_; }

 private:
  std::size_t capacity_;
  std::deque<Vector> rows_;
};

struct MomentumState {
  ModelParams shadow;
  double ema_coeff = 0.995;
  EmbeddingQueue img_queue;
  EmbeddingQueue txt_queue;
};

MomentumState make_momentum_state(const ModelParams& params, double ema_coeff,
                                  std::size_t queue_capacity);

// shadow <- m * shadow + (1 - m) * params, element-wise.
void ema_update(MomentumState& state, const ModelParams& params);

// FIFO push with eviction at capacity. Rows must be unit norm.
void queue_push(MomentumState& state, const Matrix& img_rows, const Matrix& txt_rows);

}  // namespace cosmo::encoder
