#pragma once

// Grouped mini-batch scheduling: embeddings seen during an epoch are
// collected in a queue of capacity M, each full queue is ordered by a greedy
// similarity chain, and the concatenated chains are sliced into the next
// epoch's mini-batches.

#include "cosmo/encoder.hpp"
#include "cosmo/params.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cosmo::grit {

struct SamplerConfig {
  std::size_t batch_size = 96;
  std::size_t search_space = 4800;

  // Throws std::invalid_argument unless B >= 2, M >= B and M % B == 0.
  void validate() const;
  bool operator==(const SamplerConfig&) const = default;
};

// sim(a, b) = 0.5 * (img_a . txt_b + img_b . txt_a)
double pair_similarity(const Matrix& img, const Matrix& txt, std::size_t a, std::size_t b);

// Greedy nearest-neighbour chain over the rows of img/txt, starting at row 0,
// each step taking the unvisited row with the highest similarity to the last
// (ties to the lower row). Returns row positions.
std::vector<std::size_t> chain(const Matrix& img, const Matrix& txt);

struct BatchSchedule {
  std::vector<std::vector<std::size_t>> batches;  // example indices
  std::vector<std::size_t> dropped;               // ragged tail below 2 examples

  std::size_t num_batches() const { return batches.size(); }
  // Concatenation of the batches.
  std::vector<std::size_t> order() const;
  bool operator==(const BatchSchedule&) const = default;
};

// Concatenates the blocks and slices them into size-B batches; a final batch
// smaller than 2 is dropped (recorded in `dropped`).
BatchSchedule next_epoch_schedule(const std::vector<std::vector<std::size_t>>& blocks,
                                  std::size_t batch_size);

// Seeded random permutation of `indices`, sliced the same way.
BatchSchedule random_schedule(std::span<const std::size_t> indices, std::size_t batch_size,
                              std::uint64_t seed);

void write_schedule_jsonl(std::ostream& os, const BatchSchedule& schedule);
BatchSchedule read_schedule_jsonl(std::istream& is);

class GritSampler {
 public:
  explicit GritSampler(SamplerConfig config);

  const SamplerConfig& config() const { return config_; }
  std::size_t pending() const { return indices_.size(); }
  const std::vector<std::vector<std::size_t>>& blocks() const { return blocks_; }

  // Appends the batch rows; returns the chained block (example indices) if
  // the queue filled up. Rows must be unit norm.
  std::optional<std::vector<std::size_t>> feed(const encoder::EmbeddingBatch& batch);
  // Chains whatever is left as a final partial block.
  std::optional<std::vector<std::size_t>> flush();
  // flush(), build the schedule from all blocks, and reset for a new epoch.
  BatchSchedule take_schedule();

 private:
  std::vector<std::size_t> emit();

  SamplerConfig config_;
  std::vector<std::size_t> indices_;
  std::vector<Vector> img_;
  std::vector<Vector> txt_;
  std::vector<std::vector<std::size_t>> blocks_;
};

}  // namespace cosmo::grit
