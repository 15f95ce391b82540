#pragma once

// Minimal reverse-mode tape over a closed set of matrix ops. Every loss in
// the lab is assembled from these ops, so one backward pass yields gradients
// for every parameter the loss touches (and zeros for the rest).

#include "cosmo/params.hpp"
#include "cosmo/synthdata.hpp"

#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace cosmo::ad {

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Probabilities below this floor contribute log(floor) to cross-entropy and
// no gradient.
inline constexpr double kProbFloor = 1e-12;

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  explicit Tape(const ParamBundle& params);

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var param(ParamId id);
  Var constant(Matrix value);
  const Matrix& value(Var v) const { return nodes_[v.id].value; }

  Var matmul(Var a, Var b);
  // a * b^T
  Var matmul_bt(Var a, Var b);
  Var add(Var a, Var b);
  // Adds a 1 x n row to every row of a.
  Var add_row(Var a, Var row);
  Var scale(Var a, double s);
  Var tanh(Var a);
  Var hadamard(Var a, Var b);
  Var concat_cols(std::span<const Var> parts);
  Var concat_rows(Var top, Var bottom);
  Var gather_rows(Var a, std::vector<std::size_t> rows);
  // Throws std::domain_error on a (near-)zero row.
  Var normalize_rows(Var a);
  // Row r = mean of table rows for the non-[PAD] tokens of tokens[r].
  // Throws std::out_of_range for ids >= table rows and std::domain_error for
  // an all-[PAD] sequence.
  Var mean_pool(Var table, const synthdata::TokenBatch& tokens);

  // weight * sum_r CE(targets_r, softmax(logits_r)) as a 1x1 scalar.
  // Masked-out entries (mask == false) are removed from the softmax and must
  // carry zero target mass.
  Var soft_cross_entropy(Var logits, Matrix targets, double weight,
                         std::optional<BoolMatrix> keep_mask = std::nullopt);

  Var sum(std::span<const Var> scalars);

  // Gradients of a 1x1 node w.r.t. every parameter leaf.
  ParamBundle backward(Var scalar);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void()> back;
  };

  Var push(Matrix value, std::function<void()> back = {});
  Matrix& grad(Var v);

  const ParamBundle* params_;
  std::vector<Node> nodes_;
  std::array<std::optional<std::size_t>, kNumParams> param_nodes_{};
};

}  // namespace cosmo::ad
