#include "cosmo/encoder.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace cosmo::encoder {

namespace {

constexpr double kUnitNormTol = 1e-6;

void check_unit_rows(const Matrix& rows, double tol, const char* what) {
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    const double n = rows.row(r).norm();
    if (std::abs(n - 1.0) > tol) {
      throw std::invalid_argument(std::string(what) + ": row " + std::to_string(r) +
                                  " is not unit norm (norm " + std::to_string(n) + ")");
    }
  }
}

}  // namespace

ad::Var encode_images(ad::Tape& tape, const Matrix& image_features) {
  if (!image_features.allFinite()) {
    throw std::invalid_argument("encode_images: non-finite input");
  }
  const ad::Var x = tape.constant(image_features);
  return tape.normalize_rows(tape.matmul(x, tape.param(ParamId::ImgProj)));
}

ad::Var encode_texts(ad::Tape& tape, const TokenBatch& tokens) {
  const ad::Var pooled = tape.mean_pool(tape.param(ParamId::TokenEmbed), tokens);
  return tape.normalize_rows(tape.matmul(pooled, tape.param(ParamId::TxtProj)));
}

ad::Var itm_logits(ad::Tape& tape, ad::Var img_emb, ad::Var txt_emb) {
  const double d = static_cast<double>(tape.value(img_emb).cols());
  // Unit-norm embeddings have entries ~1/sqrt(d); rescale to unit order.
  const std::array<ad::Var, 3> parts{tape.scale(img_emb, std::sqrt(d)), tape.scale(txt_emb, std::sqrt(d)),
                                     tape.scale(tape.hadamard(img_emb, txt_emb), d)};
  const ad::Var fused = tape.concat_cols(parts);
  const ad::Var hidden = tape.tanh(
      tape.add_row(tape.matmul(fused, tape.param(ParamId::ItmW1)), tape.param(ParamId::ItmB1)));
  return tape.add_row(tape.matmul(hidden, tape.param(ParamId::ItmW2)),
                      tape.param(ParamId::ItmB2));
}

Matrix encode_images(const ModelParams& params, const Matrix& image_features) {
  ad::Tape tape(params.weights);
  return tape.value(encode_images(tape, image_features));
}

Matrix encode_texts(const ModelParams& params, const TokenBatch& tokens) {
  ad::Tape tape(params.weights);
  return tape.value(encode_texts(tape, tokens));
}

Vector itm_match_prob(const ModelParams& params, const Matrix& image_features,
                      const TokenBatch& tokens) {
  if (static_cast<std::size_t>(image_features.rows()) != tokens.size()) {
    throw std::invalid_argument("itm_match_prob: image/text row count mismatch");
  }
  ad::Tape tape(params.weights);
  const ad::Var img = encode_images(tape, image_features);
  const ad::Var txt = encode_texts(tape, tokens);
  const Matrix& logits = tape.value(itm_logits(tape, img, txt));
  Vector out(logits.rows());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    // softmax over two logits, probability of column 0.
    out(r) = 1.0 / (1.0 + std::exp(logits(r, 1) - logits(r, 0)));
  }
  return out;
}

void EmbeddingBatch::validate(double tol) const {
  if (img.rows() != txt.rows() || img.cols() != txt.cols()) {
    throw std::invalid_argument("EmbeddingBatch: img/txt shape mismatch");
  }
  if (static_cast<std::size_t>(img.rows()) != example_indices.size()) {
    throw std::invalid_argument("EmbeddingBatch: example index count mismatch");
  }
  check_unit_rows(img, tol, "EmbeddingBatch img");
  check_unit_rows(txt, tol, "EmbeddingBatch txt");
}

EmbeddingBatch embed_batch(const ModelParams& params, const synthdata::SyntheticDataset& ds,
                           std::span<const std::size_t> indices) {
  EmbeddingBatch out;
  out.img = encode_images(params, ds.image_rows(indices));
  out.txt = encode_texts(params, ds.text_rows(indices));
  out.example_indices.assign(indices.begin(), indices.end());
  return out;
}

SimilarityMatrices similarity_matrix(const EmbeddingBatch& batch, const Matrix* extra_txt,
                                     const Matrix* extra_img) {
  if (batch.img.rows() != batch.txt.rows() || batch.img.cols() != batch.txt.cols()) {
    throw std::invalid_argument("similarity_matrix: img/txt shape mismatch");
  }
  if ((extra_txt == nullptr) != (extra_img == nullptr)) {
    throw std::invalid_argument("similarity_matrix: attach both queues or neither");
  }
  SimilarityMatrices out;
  if (extra_txt == nullptr) {
    out.i2t = batch.img * batch.txt.transpose();
    out.t2i = out.i2t.transpose();
    return out;
  }
  if (extra_txt->cols() != batch.txt.cols() || extra_img->cols() != batch.img.cols() ||
      extra_txt->rows() != extra_img->rows()) {
    throw std::invalid_argument("similarity_matrix: queue dimension mismatch");
  }
  Matrix all_txt(batch.txt.rows() + extra_txt->rows(), batch.txt.cols());
  all_txt << batch.txt, *extra_txt;
  Matrix all_img(batch.img.rows() + extra_img->rows(), batch.img.cols());
  all_img << batch.img, *extra_img;
  out.i2t = batch.img * all_txt.transpose();
  out.t2i = batch.txt * all_img.transpose();
  return out;
}

Vector softmax_probs(std::span<const double> scores, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax_probs: temperature must be > 0");
  if (scores.empty()) throw std::invalid_argument("softmax_probs: empty row");
  double zmax = -std::numeric_limits<double>::infinity();
  for (double s : scores) zmax = std::max(zmax, s / temperature);
  Vector p(static_cast<Eigen::Index>(scores.size()));
  double denom = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    p(static_cast<Eigen::Index>(k)) = std::exp(scores[k] / temperature - zmax);
    denom += p(static_cast<Eigen::Index>(k));
  }
  return p / denom;
}

Matrix softmax_rows(const Matrix& scores, double temperature) {
  Matrix out(scores.rows(), scores.cols());
  std::vector<double> row(static_cast<std::size_t>(scores.cols()));
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    for (Eigen::Index c = 0; c < scores.cols(); ++c) row[static_cast<std::size_t>(c)] = scores(r, c);
    out.row(r) = softmax_probs(row, temperature).transpose();
  }
  return out;
}

void EmbeddingQueue::push(const Matrix& rows) {
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    if (capacity_ == 0) return;
    if (rows_.size() == capacity_) rows_.pop_front();
    rows_.push_back(rows.row(r).transpose());
  }
}

Matrix EmbeddingQueue::matrix(Eigen::Index dim) const {
  Matrix out(static_cast<Eigen::Index>(rows_.size()), dim);
  Eigen::Index r = 0;
  for (const auto& v : rows_) {
    if (v.size() != dim) throw std::invalid_argument("EmbeddingQueue: dimension mismatch");
    out.row(r++) = v.transpose();
  }
  return out;
}

MomentumState make_momentum_state(const ModelParams& params, double ema_coeff,
                                  std::size_t queue_capacity) {
  if (!(ema_coeff >= 0.0 && ema_coeff <= 1.0)) {
    throw std::invalid_argument("ema_coeff must lie in [0, 1]");
  }
  return MomentumState{params, ema_coeff, EmbeddingQueue(queue_capacity),
                       EmbeddingQueue(queue_capacity)};
}

void ema_update(MomentumState& state, const ModelParams& params) {
  if (!state.shadow.weights.same_shape(params.weights)) {
    throw std::invalid_argument("ema_update: parameter shape mismatch");
  }
  const double m = state.ema_coeff;
  for (std::size_t i = 0; i < kNumParams; ++i) {
    auto& s = state.shadow.weights.tensors[i];
    s = m * s + (1.0 - m) * params.weights.tensors[i];
  }
}

void queue_push(MomentumState& state, const Matrix& img_rows, const Matrix& txt_rows) {
  if (img_rows.rows() != txt_rows.rows()) {
    throw std::invalid_argument("queue_push: img/txt row count mismatch");
  }
  check_unit_rows(img_rows, kUnitNormTol, "queue_push img");
  check_unit_rows(txt_rows, kUnitNormTol, "queue_push txt");
  state.img_queue.push(img_rows);
  state.txt_queue.push(txt_rows);
}

}  // namespace cosmo::encoder
