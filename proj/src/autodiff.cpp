#include "cosmo/autodiff.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace cosmo::ad {

namespace {

constexpr double kMinRowNorm = 1e-12;

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }
}

}  // namespace

Tape::Tape(const ParamBundle& params) : params_(&params) { nodes_.reserve(64); }

Var Tape::push(Matrix value, std::function<void()> back) {
  nodes_.push_back(Node{std::move(value), Matrix(), std::move(back)});
  return Var{nodes_.size() - 1};
}

Matrix& Tape::grad(Var v) {
  auto& node = nodes_[v.id];
  if (node.grad.size() == 0 && node.value.size() != 0) {
    node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
  }
  return node.grad;
}

Var Tape::param(ParamId id) {
  auto& slot = param_nodes_[static_cast<std::size_t>(id)];
  if (!slot) slot = push((*params_)[id]).id;
  return Var{*slot};
}

Var Tape::constant(Matrix value) { return push(std::move(value)); }

Var Tape::matmul(Var a, Var b) {
  if (value(a).cols() != value(b).rows()) {
    throw std::invalid_argument("matmul: inner dimension mismatch");
  }
  Var out = push(value(a) * value(b));
  nodes_[out.id].back = [this, a, b, out] {
    const Matrix& g = nodes_[out.id].grad;
    grad(a).noalias() += g * value(b).transpose();
    grad(b).noalias() += value(a).transpose() * g;
  };
  return out;
}

Var Tape::matmul_bt(Var a, Var b) {
  if (value(a).cols() != value(b).cols()) {
    throw std::invalid_argument("matmul_bt: inner dimension mismatch");
  }
  Var out = push(value(a) * value(b).transpose());
  nodes_[out.id].back = [this, a, b, out] {
    const Matrix& g = nodes_[out.id].grad;
    grad(a).noalias() += g * value(b);
    grad(b).noalias() += g.transpose() * value(a);
  };
  return out;
}

Var Tape::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  Var out = push(value(a) + value(b));
  nodes_[out.id].back = [this, a, b, out] {
    const Matrix& g = nodes_[out.id].grad;
    grad(a) += g;
    grad(b) += g;
  };
  return out;
}

Var Tape::add_row(Var a, Var row) {
  if (value(row).rows() != 1 || value(row).cols() != value(a).cols()) {
    throw std::invalid_argument("add_row: bias must be 1 x cols");
  }
  Matrix v = value(a);
  v.rowwise() += value(row).row(0);
  Var out = push(std::move(v));
  nodes_[out.id].back = [this, a, row, out] {
    const Matrix& g = nodes_[out.id].grad;
    grad(a) += g;
    grad(row) += g.colwise().sum();
  };
  return out;
}

Var Tape::scale(Var a, double s) {
  Var out = push(value(a) * s);
  nodes_[out.id].back = [this, a, s, out] { grad(a) += nodes_[out.id].grad * s; };
  return out;
}

Var Tape::tanh(Var a) {
  Var out = push(value(a).array().tanh().matrix());
  nodes_[out.id].back = [this, a, out] {
    const Matrix& y = nodes_[out.id].value;
    grad(a).array() += nodes_[out.id].grad.array() * (1.0 - y.array().square());
  };
  return out;
}

Var Tape::hadamard(Var a, Var b) {
  require_same_shape(value(a), value(b), "hadamard");
  Var out = push(value(a).cwiseProduct(value(b)));
  nodes_[out.id].back = [this, a, b, out] {
    const Matrix& g = nodes_[out.id].grad;
    grad(a) += g.cwiseProduct(value(b));
    grad(b) += g.cwiseProduct(value(a));
  };
  return out;
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const Eigen::Index rows = value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (auto p : parts) {
    if (value(p).rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += value(p).cols();
  }
  Matrix v(rows, cols);
  Eigen::Index offset = 0;
  for (auto p : parts) {
    v.middleCols(offset, value(p).cols()) = value(p);
    offset += value(p).cols();
  }
  Var out = push(std::move(v));
  std::vector<Var> inputs(parts.begin(), parts.end());
  nodes_[out.id].back = [this, inputs, out] {
    const Matrix& g = nodes_[out.id].grad;
    Eigen::Index off = 0;
    for (auto p : inputs) {
      const Eigen::Index c = value(p).cols();
      grad(p) += g.middleCols(off, c);
      off += c;
    }
  };
  return out;
}

Var Tape::concat_rows(Var top, Var bottom) {
  if (value(top).cols() != value(bottom).cols()) {
    throw std::invalid_argument("concat_rows: column mismatch");
  }
  Matrix v(value(top).rows() + value(bottom).rows(), value(top).cols());
  v << value(top), value(bottom);
  Var out = push(std::move(v));
  nodes_[out.id].back = [this, top, bottom, out] {
    const Matrix& g = nodes_[out.id].grad;
    grad(top) += g.topRows(value(top).rows());
    grad(bottom) += g.bottomRows(value(bottom).rows());
  };
  return out;
}

Var Tape::gather_rows(Var a, std::vector<std::size_t> rows) {
  const Matrix& src = value(a);
  Matrix v(static_cast<Eigen::Index>(rows.size()), src.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= static_cast<std::size_t>(src.rows())) {
      throw std::out_of_range("gather_rows: row index out of range");
    }
    v.row(static_cast<Eigen::Index>(r)) = src.row(static_cast<Eigen::Index>(rows[r]));
  }
  Var out = push(std::move(v));
  nodes_[out.id].back = [this, a, rows = std::move(rows), out] {
    const Matrix& g = nodes_[out.id].grad;
    Matrix& ga = grad(a);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      ga.row(static_cast<Eigen::Index>(rows[r])) += g.row(static_cast<Eigen::Index>(r));
    }
  };
  return out;
}

Var Tape::normalize_rows(Var a) {
  const Matrix& x = value(a);
  Vector norms = x.rowwise().norm();
  for (Eigen::Index r = 0; r < norms.size(); ++r) {
    if (!(norms(r) > kMinRowNorm)) {
      throw std::domain_error("normalize_rows: degenerate (zero-norm) row " + std::to_string(r));
    }
  }
  Matrix y = norms.cwiseInverse().asDiagonal() * x;
  Var out = push(std::move(y));
  nodes_[out.id].back = [this, a, norms = std::move(norms), out] {
    const Matrix& yv = nodes_[out.id].value;
    const Matrix& g = nodes_[out.id].grad;
    const Vector proj = (yv.cwiseProduct(g)).rowwise().sum();
    Matrix dx = g - proj.asDiagonal() * yv;
    grad(a) += norms.cwiseInverse().asDiagonal() * dx;
  };
  return out;
}

Var Tape::mean_pool(Var table, const synthdata::TokenBatch& tokens) {
  const Matrix& t = value(table);
  Matrix v = Matrix::Zero(static_cast<Eigen::Index>(tokens.size()), t.cols());
  std::vector<double> inv_counts(tokens.size());
  for (std::size_t r = 0; r < tokens.size(); ++r) {
    std::size_t count = 0;
    for (auto tok : tokens[r]) {
      if (tok >= static_cast<synthdata::TokenId>(t.rows())) {
        throw std::out_of_range("mean_pool: token id " + std::to_string(tok) +
                                " >= vocabulary size " + std::to_string(t.rows()));
      }
      if (tok == synthdata::kPadToken) continue;
      v.row(static_cast<Eigen::Index>(r)) += t.row(tok);
      ++count;
    }
    if (count == 0) {
      throw std::domain_error("mean_pool: sequence " + std::to_string(r) +
                              " has no non-[PAD] tokens");
    }
    inv_counts[r] = 1.0 / static_cast<double>(count);
    v.row(static_cast<Eigen::Index>(r)) *= inv_counts[r];
  }
  Var out = push(std::move(v));
  nodes_[out.id].back = [this, table, tokens, inv_counts = std::move(inv_counts), out] {
    const Matrix& g = nodes_[out.id].grad;
    Matrix& gt = grad(table);
    for (std::size_t r = 0; r < tokens.size(); ++r) {
      for (auto tok : tokens[r]) {
        if (tok == synthdata::kPadToken) continue;
        gt.row(tok) += inv_counts[r] * g.row(static_cast<Eigen::Index>(r));
      }
    }
  };
  return out;
}

Var Tape::soft_cross_entropy(Var logits, Matrix targets, double weight,
                             std::optional<BoolMatrix> keep_mask) {
  const Matrix& z = value(logits);
  require_same_shape(z, targets, "soft_cross_entropy");
  if (keep_mask) {
    if (keep_mask->rows() != z.rows() || keep_mask->cols() != z.cols()) {
      throw std::invalid_argument("soft_cross_entropy: mask shape mismatch");
    }
  }
  const double log_floor = std::log(kProbFloor);
  auto kept = [&](Eigen::Index r, Eigen::Index c) { return !keep_mask || (*keep_mask)(r, c); };

  Matrix probs = Matrix::Zero(z.rows(), z.cols());
  // 1 where log p is above the floor (the entry carries gradient).
  BoolMatrix live = BoolMatrix::Constant(z.rows(), z.cols(), false);
  double total = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    double zmax = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      if (kept(r, c)) zmax = std::max(zmax, z(r, c));
      else if (targets(r, c) != 0.0) {
        throw std::invalid_argument("soft_cross_entropy: masked entry carries target mass");
      }
    }
    if (!std::isfinite(zmax)) throw std::invalid_argument("soft_cross_entropy: empty row");
    double denom = 0.0;
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      if (kept(r, c)) denom += std::exp(z(r, c) - zmax);
    }
    const double lse = zmax + std::log(denom);
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      if (!kept(r, c)) continue;
      const double logp = z(r, c) - lse;
      probs(r, c) = std::exp(logp);
      if (logp > log_floor) {
        live(r, c) = true;
        total -= targets(r, c) * logp;
      } else {
        total -= targets(r, c) * log_floor;
      }
    }
  }
  Var out = push(Matrix::Constant(1, 1, weight * total));
  nodes_[out.id].back = [this, logits, targets = std::move(targets), probs = std::move(probs),
                         live = std::move(live), weight, out] {
    const double g = weight * nodes_[out.id].grad(0, 0);
    Matrix& gz = grad(logits);
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      double live_mass = 0.0;
      for (Eigen::Index c = 0; c < probs.cols(); ++c) {
        if (live(r, c)) live_mass += targets(r, c);
      }
      for (Eigen::Index c = 0; c < probs.cols(); ++c) {
        // Masked entries have probs == 0 and are never live.
        gz(r, c) += g * (probs(r, c) * live_mass - (live(r, c) ? targets(r, c) : 0.0));
      }
    }
  };
  return out;
}

Var Tape::sum(std::span<const Var> scalars) {
  double total = 0.0;
  for (auto s : scalars) {
    if (value(s).size() != 1) throw std::invalid_argument("sum: expects 1x1 inputs");
    total += value(s)(0, 0);
  }
  Var out = push(Matrix::Constant(1, 1, total));
  std::vector<Var> inputs(scalars.begin(), scalars.end());
  nodes_[out.id].back = [this, inputs, out] {
    const double g = nodes_[out.id].grad(0, 0);
    for (auto s : inputs) grad(s)(0, 0) += g;
  };
  return out;
}

ParamBundle Tape::backward(Var scalar) {
  if (value(scalar).size() != 1) throw std::invalid_argument("backward: expects a 1x1 node");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  grad(scalar)(0, 0) = 1.0;
  for (std::size_t i = scalar.id + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node.grad.size() != 0 && node.back) node.back();
  }
  ParamBundle out = ParamBundle::zeros_like(*params_);
  for (auto id : kAllParams) {
    const auto& slot = param_nodes_[static_cast<std::size_t>(id)];
    if (slot && nodes_[*slot].grad.size() != 0) out[id] = nodes_[*slot].grad;
  }
  return out;
}

}  // namespace cosmo::ad
