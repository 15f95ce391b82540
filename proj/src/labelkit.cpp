#include "cosmo/labelkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <stdexcept>
#include <unordered_set>

namespace cosmo::labelkit {

namespace {

void require_alpha(double alpha, const char* op) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument(std::string(op) + ": alpha must lie in [0, 1]");
  }
}

LabelKind smoothed_kind(LabelKind k) {
  switch (k) {
    case LabelKind::OneHot: return LabelKind::Smoothed;
    case LabelKind::EcmCorrected: return LabelKind::EcmSmoothed;
    default: return k;
  }
}

LabelMatrix mix(const LabelMatrix& labels, const Matrix& soft, double alpha, LabelKind kind,
                const char* op) {
  require_alpha(alpha, op);
  if (soft.rows() != labels.rows.rows() || soft.cols() != labels.rows.cols()) {
    throw std::invalid_argument(std::string(op) + ": width mismatch (labels " +
                                std::to_string(labels.rows.cols()) + ", soft component " +
                                std::to_string(soft.cols()) + ")");
  }
  for (Eigen::Index r = 0; r < soft.rows(); ++r) {
    if ((soft.row(r).array() < 0.0).any() || std::abs(soft.row(r).sum() - 1.0) > 1e-9) {
      throw std::invalid_argument(std::string(op) + ": soft component row " +
                                  std::to_string(r) + " is not a distribution");
    }
  }
  LabelMatrix out;
  out.rows = (1.0 - alpha) * labels.rows + alpha * soft;
  out.kind = kind;
  out.pair_positions = labels.pair_positions;
  return out;
}

}  // namespace

std::string_view to_string(LabelKind kind) {
  switch (kind) {
    case LabelKind::OneHot: return "onehot";
    case LabelKind::Smoothed: return "smoothed";
    case LabelKind::EcmCorrected: return "ecm_corrected";
    case LabelKind::EcmSmoothed: return "ecm_smoothed";
    case LabelKind::MomentumDistilled: return "momentum_distilled";
    case LabelKind::Consistency: return "consistency";
  }
  return "unknown";
}

void LabelMatrix::validate(double tol) const {
  if (pair_positions.size() != batch()) {
    throw std::logic_error("LabelMatrix: pair position count != rows");
  }
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    if ((rows.row(r).array() < -tol).any() || (rows.row(r).array() > 1.0 + tol).any()) {
      throw std::logic_error("LabelMatrix: entry outside [0,1] in row " + std::to_string(r));
    }
    if (std::abs(rows.row(r).sum() - 1.0) > tol) {
      throw std::logic_error("LabelMatrix: row " + std::to_string(r) + " does not sum to 1");
    }
  }
}

LabelMatrix onehot(std::size_t width, std::span<const std::size_t> pair_positions) {
  if (pair_positions.empty()) throw std::invalid_argument("onehot: no rows");
  std::unordered_set<std::size_t> seen;
  LabelMatrix out;
  out.rows = Matrix::Zero(static_cast<Eigen::Index>(pair_positions.size()),
                          static_cast<Eigen::Index>(width));
  for (std::size_t r = 0; r < pair_positions.size(); ++r) {
    const auto p = pair_positions[r];
    if (p >= width) throw std::invalid_argument("onehot: pair position >= width");
    if (!seen.insert(p).second) {
      throw std::invalid_argument("onehot: duplicate pair position " + std::to_string(p));
    }
    out.rows(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(p)) = 1.0;
  }
  out.pair_positions.assign(pair_positions.begin(), pair_positions.end());
  out.kind = LabelKind::OneHot;
  return out;
}

LabelMatrix onehot_diagonal(std::size_t batch, std::size_t width) {
  std::vector<std::size_t> pos(batch);
  for (std::size_t b = 0; b < batch; ++b) pos[b] = b;
  return onehot(width, pos);
}

LabelMatrix smooth(const LabelMatrix& labels, double alpha) {
  require_alpha(alpha, "smooth");
  const double n = static_cast<double>(labels.width());
  LabelMatrix out;
  out.rows = ((1.0 - alpha) * labels.rows).array() + alpha / n;
  out.kind = smoothed_kind(labels.kind);
  out.pair_positions = labels.pair_positions;
  return out;
}

LabelMatrix ecm_correct_itc(const LabelMatrix& labels, std::span<const Conversion> conversions) {
  if (conversions.empty()) return labels;
  if (labels.kind != LabelKind::OneHot && labels.kind != LabelKind::EcmCorrected) {
    throw std::invalid_argument("ecm_correct_itc: expects one-hot (or already corrected) labels");
  }
  std::unordered_set<std::size_t> anchors;
  LabelMatrix out = labels;
  for (const auto& c : conversions) {
    if (c.anchor >= labels.batch()) throw std::invalid_argument("ecm_correct_itc: anchor out of range");
    if (c.index >= labels.width()) throw std::invalid_argument("ecm_correct_itc: index out of range");
    const auto pair = labels.pair_positions[c.anchor];
    if (c.index == pair) {
      throw std::invalid_argument("ecm_correct_itc: conversion targets the pair position of anchor " +
                                  std::to_string(c.anchor));
    }
    if (!anchors.insert(c.anchor).second) {
      throw std::invalid_argument("ecm_correct_itc: more than one conversion for anchor " +
                                  std::to_string(c.anchor));
    }
    auto row = out.rows.row(static_cast<Eigen::Index>(c.anchor));
    // An already-converted row may only be re-converted to the same column.
    const Eigen::Index nonzero = (row.array() > 0.0).count();
    if (nonzero > 1 && row(static_cast<Eigen::Index>(c.index)) != 0.5) {
      throw std::invalid_argument("ecm_correct_itc: anchor " + std::to_string(c.anchor) +
                                  " already converted to another column");
    }
    row.setZero();
    row(static_cast<Eigen::Index>(pair)) = 0.5;
    row(static_cast<Eigen::Index>(c.index)) = 0.5;
  }
  out.kind = LabelKind::EcmCorrected;
  return out;
}

LabelMatrix md_labels(const LabelMatrix& labels, const Matrix& momentum_probs, double alpha) {
  return mix(labels, momentum_probs, alpha, LabelKind::MomentumDistilled, "md_labels");
}

LabelMatrix cs_labels(const LabelMatrix& labels, const Matrix& swapped_probs, double alpha) {
  if (labels.width() != labels.batch()) {
    throw std::invalid_argument("cs_labels: width must equal batch size");
  }
  return mix(labels, swapped_probs, alpha, LabelKind::Consistency, "cs_labels");
}

Matrix swapped_direction_targets(const Matrix& opposite_probs) {
  if (opposite_probs.rows() != opposite_probs.cols()) {
    throw std::invalid_argument("swapped_direction_targets: expects a square B x B matrix");
  }
  Matrix out = opposite_probs.transpose();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double s = out.row(r).sum();
    if (!(s > 0.0)) throw std::invalid_argument("swapped_direction_targets: zero column");
    out.row(r) /= s;
  }
  return out;
}

ShapeAccumulator::ShapeAccumulator(std::size_t batch, std::size_t queue)
    : batch_(batch), queue_(queue) {
  if (batch == 0) throw std::invalid_argument("ShapeAccumulator: batch must be > 0");
}

void ShapeAccumulator::add_row(std::span<const double> row) {
  const std::size_t w = row.size();
  if (w != batch_ && !(queue_ > 0 && w == batch_ + queue_)) {
    throw std::invalid_argument("shape_report: row width " + std::to_string(w) +
                                " is neither B nor B+Q");
  }
  if (width_ && *width_ != w) throw std::invalid_argument("shape_report: rows differ in width");
  if (!width_) {
    width_ = w;
    sorted_sum_ = Vector::Zero(static_cast<Eigen::Index>(w));
  }
  scratch_.assign(row.begin(), row.end());
  std::sort(scratch_.begin(), scratch_.end(), std::greater<>());
  for (std::size_t k = 0; k < w; ++k) sorted_sum_(static_cast<Eigen::Index>(k)) += scratch_[k];
  ++count_;
}

void ShapeAccumulator::add(const Matrix& rows) {
  std::vector<double> row(static_cast<std::size_t>(rows.cols()));
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    for (Eigen::Index c = 0; c < rows.cols(); ++c) row[static_cast<std::size_t>(c)] = rows(r, c);
    add_row(row);
  }
}

ShapeReport ShapeAccumulator::report() const {
  ShapeReport rep;
  rep.rows_seen = count_;
  if (count_ == 0) return rep;
  const Vector mean = sorted_sum_ / static_cast<double>(count_);
  const auto w = static_cast<Eigen::Index>(*width_);
  const auto b = static_cast<Eigen::Index>(batch_);
  const Eigen::Index top = std::min<Eigen::Index>(5, b);
  rep.top1_5 = mean.head(top).sum();
  rep.top6_b = mean.segment(top, b - top).sum();
  if (w > b) rep.top_b1_bq = mean.tail(w - b).sum();
  return rep;
}

ShapeReport shape_report(const Matrix& rows, std::size_t batch, std::size_t queue) {
  ShapeAccumulator acc(batch, queue);
  acc.add(rows);
  return acc.report();
}

std::string shape_csv_header() { return "method,alpha,B,Q,bucket1,bucket2,bucket3"; }

std::string shape_csv_row(std::string_view method, double alpha, std::size_t batch,
                          std::size_t queue, const ShapeReport& report) {
  char buf[256];
  std::string b3;
  if (report.top_b1_bq) {
    char tmp[32];
    std::snprintf(tmp, sizeof tmp, "%.4f", *report.top_b1_bq);
    b3 = tmp;
  }
  std::snprintf(buf, sizeof buf, "%.*s,%g,%zu,%zu,%.4f,%.4f,%s", static_cast<int>(method.size()),
                method.data(), alpha, batch, queue, report.top1_5, report.top6_b, b3.c_str());
  return buf;
}

}  // namespace cosmo::labelkit
