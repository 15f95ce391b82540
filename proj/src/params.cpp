#include "cosmo/params.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace cosmo {

std::string_view param_name(ParamId id) {
  switch (id) {
    case ParamId::ImgProj: return "img_proj";
    case ParamId::TokenEmbed: return "token_embed";
    case ParamId::TxtProj: return "txt_proj";
    case ParamId::ItmW1: return "itm_w1";
    case ParamId::ItmB1: return "itm_b1";
    case ParamId::ItmW2: return "itm_w2";
    case ParamId::ItmB2: return "itm_b2";
    case ParamId::MlmHead: return "mlm_head";
  }
  return "unknown";
}

ParamBundle ParamBundle::zeros_like(const ParamBundle& shape) {
  ParamBundle out;
  for (std::size_t i = 0; i < kNumParams; ++i) {
    out.tensors[i] = Matrix::Zero(shape.tensors[i].rows(), shape.tensors[i].cols());
  }
  return out;
}

ParamBundle& ParamBundle::operator+=(const ParamBundle& other) {
  if (!same_shape(other)) throw std::invalid_argument("ParamBundle +=: shape mismatch");
  for (std::size_t i = 0; i < kNumParams; ++i) tensors[i] += other.tensors[i];
  return *this;
}

bool ParamBundle::same_shape(const ParamBundle& other) const {
  for (std::size_t i = 0; i < kNumParams; ++i) {
    if (tensors[i].rows() != other.tensors[i].rows() ||
        tensors[i].cols() != other.tensors[i].cols()) {
      return false;
    }
  }
  return true;
}

bool ParamBundle::all_finite() const {
  for (const auto& t : tensors) {
    if (!t.allFinite()) return false;
  }
  return true;
}

std::size_t ParamBundle::total_size() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
  return n;
}

bool ParamBundle::operator==(const ParamBundle& other) const {
  if (!same_shape(other)) return false;
  for (std::size_t i = 0; i < kNumParams; ++i) {
    if (tensors[i] != other.tensors[i]) return false;
  }
  return true;
}

void ModelDims::validate() const {
  if (d_img < 1 || vocab_size < 2 || d_tok < 1 || d_proj < 1 || itm_hidden < 1) {
    throw std::invalid_argument("ModelDims: all dimensions must be positive (vocab >= 2)");
  }
}

ModelDims ModelParams::dims() const {
  ModelDims d;
  d.d_img = static_cast<int>(weights[ParamId::ImgProj].rows());
  d.d_proj = static_cast<int>(weights[ParamId::ImgProj].cols());
  d.vocab_size = static_cast<int>(weights[ParamId::TokenEmbed].rows());
  d.d_tok = static_cast<int>(weights[ParamId::TokenEmbed].cols());
  d.itm_hidden = static_cast<int>(weights[ParamId::ItmW1].cols());
  return d;
}

void ModelParams::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("ModelParams: temperature must be positive and finite");
  }
  if (!weights.all_finite()) throw std::invalid_argument("ModelParams: non-finite weights");
  const ModelDims d = dims();
  auto expect = [&](ParamId id, Eigen::Index r, Eigen::Index c) {
    if (weights[id].rows() != r || weights[id].cols() != c) {
      throw std::invalid_argument("ModelParams: " + std::string(param_name(id)) +
                                  " has inconsistent shape");
    }
  };
  expect(ParamId::TxtProj, d.d_tok, d.d_proj);
  expect(ParamId::ItmW1, 3 * d.d_proj, d.itm_hidden);
  expect(ParamId::ItmB1, 1, d.itm_hidden);
  expect(ParamId::ItmW2, d.itm_hidden, 2);
  expect(ParamId::ItmB2, 1, 2);
  expect(ParamId::MlmHead, d.d_tok + d.d_proj, d.vocab_size);
}

ModelParams init_params(const ModelDims& dims, std::uint64_t seed, double temperature,
                        double encoder_scale) {
  dims.validate();
  if (!(encoder_scale > 0.0)) throw std::invalid_argument("init_params: encoder_scale must be > 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Eigen::Index rows, Eigen::Index cols, double scale) {
    Matrix m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
      for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = scale * normal(rng);
    }
    return m;
  };
  auto fan_in = [](int n) { return 1.0 / std::sqrt(static_cast<double>(n)); };

  ModelParams p;
  p.temperature = temperature;
  p.weights[ParamId::ImgProj] = gaussian(dims.d_img, dims.d_proj, encoder_scale * fan_in(dims.d_img));
  p.weights[ParamId::TokenEmbed] = gaussian(dims.vocab_size, dims.d_tok, encoder_scale);
  p.weights[ParamId::TxtProj] = gaussian(dims.d_tok, dims.d_proj, encoder_scale * fan_in(dims.d_tok));
  p.weights[ParamId::ItmW1] = gaussian(3 * dims.d_proj, dims.itm_hidden, fan_in(3 * dims.d_proj));
  p.weights[ParamId::ItmB1] = Matrix::Zero(1, dims.itm_hidden);
  p.weights[ParamId::ItmW2] = gaussian(dims.itm_hidden, 2, fan_in(dims.itm_hidden));
  p.weights[ParamId::ItmB2] = Matrix::Zero(1, 2);
  p.weights[ParamId::MlmHead] =
      gaussian(dims.d_tok + dims.d_proj, dims.vocab_size, fan_in(dims.d_tok + dims.d_proj));
  p.validate();
  return p;
}

}  // namespace cosmo
