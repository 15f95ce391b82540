#pragma once

// Target distributions for the contrastive losses and the sorted soft-label
// shape analysis.

#include "cosmo/params.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cosmo::labelkit {

enum class LabelKind { OneHot, Smoothed, EcmCorrected, EcmSmoothed, MomentumDistilled, Consistency };

std::string_view to_string(LabelKind kind);

struct LabelMatrix {
  Matrix rows;  // B x N, each row a distribution
  LabelKind kind = LabelKind::OneHot;
  // Column of the recorded positive for each row.
  std::vector<std::size_t> pair_positions;

  std::size_t batch() const { return static_cast<std::size_t>(rows.rows()); }
  std::size_t width() const { return static_cast<std::size_t>(rows.cols()); }
  // Throws std::logic_error if a row leaves [0,1] or does not sum to 1.
  void validate(double tol = 1e-9) const;
};

// One ECM label conversion: row `anchor` gains column `index` as a positive.
struct Conversion {
  std::size_t anchor = 0;
  std::size_t index = 0;
  bool operator==(const Conversion&) const = default;
};

// Row b is one-hot at pair_positions[b]. Positions must be distinct and < width.
LabelMatrix onehot(std::size_t width, std::span<const std::size_t> pair_positions);
// Row b one-hot at column b.
LabelMatrix onehot_diagonal(std::size_t batch, std::size_t width);

// (1 - alpha) * labels + alpha / N, N = labels.width().
LabelMatrix smooth(const LabelMatrix& labels, double alpha);

// Converted rows become 0.5 at the pair position and 0.5 at the converted
// column. At most one conversion per anchor; converting the pair position
// itself is rejected.
LabelMatrix ecm_correct_itc(const LabelMatrix& labels, std::span<const Conversion> conversions);

// (1 - alpha) * labels + alpha * momentum_probs. The probabilities enter as
// constants; width must be B + Q.
LabelMatrix md_labels(const LabelMatrix& labels, const Matrix& momentum_probs, double alpha);

// (1 - alpha) * labels + alpha * swapped_probs, width B, where row b of
// swapped_probs holds the opposite direction's probabilities for anchor b
// (see swapped_direction_targets).
LabelMatrix cs_labels(const LabelMatrix& labels, const Matrix& swapped_probs, double alpha);

// Given the opposite direction's probability matrix P (row t = distribution
// of text t over images), returns for each image anchor i the column
// P[:, i], renormalized to sum to 1.
Matrix swapped_direction_targets(const Matrix& opposite_probs);

struct ShapeReport {
  double top1_5 = 0.0;
  double top6_b = 0.0;
  std::optional<double> top_b1_bq;
  std::size_t rows_seen = 0;

  double total() const { return top1_5 + top6_b + top_b1_bq.value_or(0.0); }
};

// Per-row descending sort, average over all rows added, then bucket sums.
class ShapeAccumulator {
 public:
  ShapeAccumulator(std::size_t batch, std::size_t queue);
  // Rows must have width B (or B + Q when Q > 0).
  void add(const Matrix& rows);
  void add_row(std::span<const double> row);
  ShapeReport report() const;
  std::size_t rows_seen() const { return count_; }

 private:
  std::size_t batch_;
  std::size_t queue_;
  std::optional<std::size_t> width_;
  Vector sorted_sum_;
  std::size_t count_ = 0;
  std::vector<double> scratch_;
};

ShapeReport shape_report(const Matrix& rows, std::size_t batch, std::size_t queue);

std::string shape_csv_header();
std::string shape_csv_row(std::string_view method, double alpha, std::size_t batch,
                          std::size_t queue, const ShapeReport& report);

}  // namespace cosmo::labelkit
