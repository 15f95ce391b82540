#include "cosmo/checkpoint.hpp"
#include "cosmo/encoder.hpp"

#include "fixture.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace cosmo;
using namespace cosmo::encoder;

namespace {

struct Fixture {
  synthdata::GenConfig g = fixture::small_gen(21);
  synthdata::SyntheticDataset ds = synthdata::generate(g);
  ModelParams params = init_params(fixture::small_dims(g), 5);
};

void expect_unit_rows(const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) EXPECT_NEAR(m.row(r).norm(), 1.0, 1e-9);
}

}  // namespace

TEST(Encoder, OutputsAreUnitNorm) {
  Fixture f;
  const auto idx = fixture::first_n(f.ds.size());
  expect_unit_rows(encode_images(f.params, f.ds.image_rows(idx)));
  expect_unit_rows(encode_texts(f.params, f.ds.text_rows(idx)));
}

TEST(Encoder, ImageScaleDoesNotChangeEmbedding) {
  Fixture f;
  Matrix x = f.ds.image_rows(fixture::first_n(4));
  const Matrix a = encode_images(f.params, x);
  x.row(2) *= 2.0;
  const Matrix b = encode_images(f.params, x);
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Encoder, ZeroImageRowRejected) {
  Fixture f;
  Matrix x = f.ds.image_rows(fixture::first_n(3));
  x.row(1).setZero();
  EXPECT_THROW(encode_images(f.params, x), std::domain_error);
}

TEST(Encoder, TextEmbeddingIsPermutationInvariant) {
  Fixture f;
  auto toks = f.ds.text_rows(fixture::first_n(3));
  const Matrix a = encode_texts(f.params, toks);
  std::reverse(toks[0].begin(), toks[0].end());
  std::rotate(toks[2].begin(), toks[2].begin() + 2, toks[2].end());
  const Matrix b = encode_texts(f.params, toks);
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Encoder, DegenerateTextsRejected) {
  Fixture f;
  auto toks = f.ds.text_rows(fixture::first_n(2));
  auto pad = toks;
  std::fill(pad[1].begin(), pad[1].end(), synthdata::kPadToken);
  EXPECT_THROW(encode_texts(f.params, pad), std::domain_error);
  auto oov = toks;
  oov[0][0] = static_cast<synthdata::TokenId>(f.g.vocab_size);
  EXPECT_THROW(encode_texts(f.params, oov), std::out_of_range);
}

TEST(Similarity, IdenticalRowsGiveUnitDiagonalAndTransposeSymmetry) {
  Fixture f;
  EmbeddingBatch b = embed_batch(f.params, f.ds, fixture::first_n(6));
  auto s = similarity_matrix(b);
  EXPECT_LT((s.i2t - s.t2i.transpose()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE(s.i2t.cwiseAbs().maxCoeff(), 1.0 + 1e-12);

  EmbeddingBatch same{b.img, b.img, b.example_indices};
  s = similarity_matrix(same);
  for (Eigen::Index i = 0; i < 6; ++i) EXPECT_NEAR(s.i2t(i, i), 1.0, 1e-12);
}

TEST(Similarity, OrthogonalPairIsZeroAndQueuesStack) {
  EmbeddingBatch b;
  b.img = Matrix::Identity(2, 3);
  b.txt = Matrix::Zero(2, 3);
  b.txt(0, 1) = 1.0;
  b.txt(1, 2) = 1.0;
  b.example_indices = {0, 1};
  const Matrix qt = Matrix::Identity(1, 3);
  const Matrix qi = Matrix::Identity(1, 3);
  const auto s = similarity_matrix(b, &qt, &qi);
  ASSERT_EQ(s.i2t.cols(), 3);
  EXPECT_EQ(s.i2t(0, 0), 0.0);
  EXPECT_EQ(s.i2t(0, 2), 1.0);  // queue text equals image 0
  EXPECT_THROW(similarity_matrix(b, &qt, nullptr), std::invalid_argument);
  const Matrix bad = Matrix::Identity(1, 2);
  EXPECT_THROW(similarity_matrix(b, &bad, &bad), std::invalid_argument);
}

TEST(Softmax, ClosedFormsAndLimits) {
  const std::vector<double> eq{0.3, 0.3, 0.3, 0.3};
  const Vector u = softmax_probs(eq, 0.07);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_NEAR(u(i), 0.25, 1e-15);

  const std::vector<double> two{1.0, 0.0};
  const Vector p = softmax_probs(two, 1.0);
  EXPECT_NEAR(p(0), std::exp(1.0) / (1.0 + std::exp(1.0)), 1e-15);
  EXPECT_NEAR(p(0), 0.7311, 1e-4);
  EXPECT_NEAR(p(1), 0.2689, 1e-4);

  const std::vector<double> distinct{0.2, 0.5, 0.1};
  const Vector sharp = softmax_probs(distinct, 1e-3);
  EXPECT_NEAR(sharp(1), 1.0, 1e-6);
  EXPECT_NEAR(sharp(0) + sharp(2), 0.0, 1e-6);
  EXPECT_THROW(softmax_probs(distinct, 0.0), std::invalid_argument);
}

TEST(Softmax, ShiftInvariantAndNormalized) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(9), y(9);
    const double c = 10.0 * U(rng);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = U(rng);
      y[i] = x[i] + c;
    }
    const Vector a = softmax_probs(x, 0.07), b = softmax_probs(y, 0.07);
    EXPECT_NEAR(a.sum(), 1.0, 1e-12);
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GT(a.minCoeff(), 0.0);
  }
}

TEST(Momentum, EmaEndpointsAndArithmetic) {
  Fixture f;
  ModelParams zero = f.params;
  ModelParams one = f.params;
  for (auto& t : zero.weights.tensors) t.setZero();
  for (auto& t : one.weights.tensors) t.setOnes();

  auto s0 = make_momentum_state(zero, 0.0, 4);
  ema_update(s0, one);
  EXPECT_TRUE(s0.shadow.weights == one.weights);

  auto s1 = make_momentum_state(zero, 1.0, 4);
  ema_update(s1, one);
  EXPECT_TRUE(s1.shadow.weights == zero.weights);

  auto h = make_momentum_state(zero, 0.5, 4);
  ema_update(h, one);
  ema_update(h, one);
  for (const auto& t : h.shadow.weights.tensors) {
    EXPECT_DOUBLE_EQ(t.minCoeff(), 0.75);
    EXPECT_DOUBLE_EQ(t.maxCoeff(), 0.75);
  }
  ModelParams other = init_params(ModelDims{}, 1);
  EXPECT_THROW(ema_update(h, other), std::invalid_argument);
}

TEST(Momentum, QueueFifoCapacityAndEvictionOrder) {
  Fixture f;
  auto st = make_momentum_state(f.params, 0.995, 5);
  auto tagged = [](int first, int n) {
    Matrix m = Matrix::Zero(n, 8);
    for (int r = 0; r < n; ++r) m(r, (first + r) % 8) = 1.0;
    return m;
  };
  queue_push(st, tagged(0, 3), tagged(0, 3));
  EXPECT_EQ(st.img_queue.size(), 3u);
  queue_push(st, tagged(3, 3), tagged(3, 3));
  queue_push(st, tagged(6, 3), tagged(6, 3));
  EXPECT_EQ(st.img_queue.size(), 5u);
  // Oldest remaining tag is 4: tags 0..3 evicted in insertion order.
  const Matrix q = st.img_queue.matrix(8);
  for (int r = 0; r < 5; ++r) EXPECT_EQ(q(r, (4 + r) % 8), 1.0) << r;

  Matrix bad = tagged(0, 1) * 2.0;
  EXPECT_THROW(queue_push(st, bad, bad), std::invalid_argument);
}

TEST(Itm, MatchProbabilityInUnitInterval) {
  Fixture f;
  const auto idx = fixture::first_n(10);
  const Vector p = itm_match_prob(f.params, f.ds.image_rows(idx), f.ds.text_rows(idx));
  EXPECT_GE(p.minCoeff(), 0.0);
  EXPECT_LE(p.maxCoeff(), 1.0);
}

TEST(Checkpoint, RoundTripIsExact) {
  Fixture f;
  fixture::TempDir dir("ckpt");
  f.params.temperature = 0.05;
  checkpoint::save(f.params, dir / "m");
  const auto back = checkpoint::load(dir / "m");
  EXPECT_TRUE(back.weights == f.params.weights);
  EXPECT_EQ(back.temperature, 0.05);
  EXPECT_THROW(checkpoint::load(dir / "missing"), checkpoint::CheckpointError);
}

TEST(Params, InitScaleMultipliesEncoderWeights) {
  const ModelDims d;
  const auto a = init_params(d, 9, 0.07, 1.0);
  const auto b = init_params(d, 9, 0.07, 0.5);
  EXPECT_TRUE(b.weights[ParamId::ImgProj].isApprox(0.5 * a.weights[ParamId::ImgProj]));
  EXPECT_TRUE(b.weights[ParamId::ItmW1] == a.weights[ParamId::ItmW1]);
  EXPECT_THROW(init_params(d, 9, 0.07, 0.0), std::invalid_argument);
}
