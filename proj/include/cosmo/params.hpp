#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>

namespace cosmo {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class ParamId : std::uint8_t {
  ImgProj,     // d_img x d_proj
  TokenEmbed,  // V x d_tok
  TxtProj,     // d_tok x d_proj
  ItmW1,       // 3*d_proj x hidden
  ItmB1,       // 1 x hidden
  ItmW2,       // hidden x 2
  ItmB2,       // 1 x 2
  MlmHead,     // (d_tok + d_proj) x V
};

inline constexpr std::size_t kNumParams = 8;
inline constexpr std::array<ParamId, kNumParams> kAllParams{
    ParamId::ImgProj, ParamId::TokenEmbed, ParamId::TxtProj, ParamId::ItmW1,
    ParamId::ItmB1,   ParamId::ItmW2,      ParamId::ItmB2,   ParamId::MlmHead};

std::string_view param_name(ParamId id);

// One tensor per ParamId. Doubles as the gradient bundle.
struct ParamBundle {
  std::array<Matrix, kNumParams> tensors;

  Matrix& operator[](ParamId id) { return tensors[static_cast<std::size_t>(id)]; }
  const Matrix& operator[](ParamId id) const { return tensors[static_cast<std::size_t>(id)]; }

  static ParamBundle zeros_like(const ParamBundle& shape);
  ParamBundle& operator+=(const ParamBundle& other);
  bool same_shape(const ParamBundle& other) const;
  bool all_finite() const;
  std::size_t total_size() const;
  bool operator==(const ParamBundle& other) const;
};

struct ModelDims {
  int d_img = 32;
  int vocab_size = 256;
  int d_tok = 32;
  int d_proj = 16;
  int itm_hidden = 64;

  void validate() const;
  bool operator==(const ModelDims&) const = default;
};

struct ModelParams {
  ParamBundle weights;
  // Softmax temperature for contrastive probabilities; fixed during training.
  double temperature = 0.07;

  ModelDims dims() const;
  void validate() const;
};

// Scaled Gaussian init (1/sqrt(fan_in)); biases start at zero. The two
// encoder projections and the token table are further multiplied by
// encoder_scale.
ModelParams init_params(const ModelDims& dims, std::uint64_t seed, double temperature = 0.07,
                        double encoder_scale = 1.0);

}  // namespace cosmo
