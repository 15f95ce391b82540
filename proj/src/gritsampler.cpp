#include "cosmo/gritsampler.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

namespace cosmo::grit {

void SamplerConfig::validate() const {
  if (batch_size < 2) throw std::invalid_argument("SamplerConfig: batch_size must be >= 2");
  if (search_space < batch_size) throw std::invalid_argument("SamplerConfig: search_space must be >= batch_size");
  if (search_space % batch_size != 0) {
    throw std::invalid_argument("SamplerConfig: search_space must be a multiple of batch_size");
  }
}

double pair_similarity(const Matrix& img, const Matrix& txt, std::size_t a, std::size_t b) {
  const auto ia = static_cast<Eigen::Index>(a);
  const auto ib = static_cast<Eigen::Index>(b);
  return 0.5 * (img.row(ia).dot(txt.row(ib)) + img.row(ib).dot(txt.row(ia)));
}

std::vector<std::size_t> chain(const Matrix& img, const Matrix& txt) {
  if (img.rows() != txt.rows() || img.cols() != txt.cols()) {
    throw std::invalid_argument("chain: image/text shapes differ");
  }
  const auto n = static_cast<std::size_t>(img.rows());
  std::vector<std::size_t> order;
  if (n == 0) return order;
  order.reserve(n);
  std::vector<bool> visited(n, false);
  std::size_t last = 0;
  visited[0] = true;
  order.push_back(0);
  Vector sim(static_cast<Eigen::Index>(n));
  for (std::size_t step = 1; step < n; ++step) {
    const auto l = static_cast<Eigen::Index>(last);
    sim.noalias() = 0.5 * (txt * img.row(l).transpose() + img * txt.row(l).transpose());
    std::size_t best = n;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (visited[j]) continue;
      const double s = sim(static_cast<Eigen::Index>(j));
      if (best == n || s > best_sim) {
        best = j;
        best_sim = s;
      }
    }
    visited[best] = true;
    order.push_back(best);
    last = best;
  }
  return order;
}

std::vector<std::size_t> BatchSchedule::order() const {
  std::vector<std::size_t> out;
  for (const auto& b : batches) out.insert(out.end(), b.begin(), b.end());
  return out;
}

BatchSchedule next_epoch_schedule(const std::vector<std::vector<std::size_t>>& blocks,
                                  std::size_t batch_size) {
  if (batch_size < 2) throw std::invalid_argument("next_epoch_schedule: batch_size must be >= 2");
  std::vector<std::size_t> all;
  for (const auto& b : blocks) all.insert(all.end(), b.begin(), b.end());
  if (all.empty()) throw std::invalid_argument("next_epoch_schedule: no blocks");
  BatchSchedule s;
  for (std::size_t start = 0; start < all.size(); start += batch_size) {
    const std::size_t end = std::min(all.size(), start + batch_size);
    std::vector<std::size_t> batch(all.begin() + static_cast<std::ptrdiff_t>(start),
                                   all.begin() + static_cast<std::ptrdiff_t>(end));
    if (batch.size() < 2) {
      s.dropped = std::move(batch);
    } else {
      s.batches.push_back(std::move(batch));
    }
  }
  return s;
}

BatchSchedule random_schedule(std::span<const std::size_t> indices, std::size_t batch_size,
                              std::uint64_t seed) {
  std::vector<std::size_t> perm(indices.begin(), indices.end());
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  return next_epoch_schedule({perm}, batch_size);
}

void write_schedule_jsonl(std::ostream& os, const BatchSchedule& schedule) {
  for (std::size_t i = 0; i < schedule.batches.size(); ++i) {
    os << nlohmann::json{{"batch", i}, {"indices", schedule.batches[i]}}.dump() << '\n';
  }
  if (!schedule.dropped.empty()) {
    os << nlohmann::json{{"dropped", schedule.dropped}}.dump() << '\n';
  }
}

BatchSchedule read_schedule_jsonl(std::istream& is) {
  BatchSchedule s;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    if (j.contains("dropped")) {
      s.dropped = j.at("dropped").get<std::vector<std::size_t>>();
    } else {
      if (j.at("batch").get<std::size_t>() != s.batches.size()) {
        throw std::runtime_error("read_schedule_jsonl: batches out of order");
      }
      s.batches.push_back(j.at("indices").get<std::vector<std::size_t>>());
    }
  }
  return s;
}

GritSampler::GritSampler(SamplerConfig config) : config_(config) { config_.validate(); }

std::vector<std::size_t> GritSampler::emit() {
  const auto n = static_cast<Eigen::Index>(indices_.size());
  const auto d = img_.front().size();
  Matrix img(n, d);
  Matrix txt(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    img.row(r) = img_[static_cast<std::size_t>(r)].transpose();
    txt.row(r) = txt_[static_cast<std::size_t>(r)].transpose();
  }
  std::vector<std::size_t> block;
  block.reserve(indices_.size());
  for (auto pos : chain(img, txt)) block.push_back(indices_[pos]);
  indices_.clear();
  img_.clear();
  txt_.clear();
  blocks_.push_back(block);
  return block;
}

std::optional<std::vector<std::size_t>> GritSampler::feed(const encoder::EmbeddingBatch& batch) {
  batch.validate(1e-6);
  std::optional<std::vector<std::size_t>> out;
  for (std::size_t r = 0; r < batch.size(); ++r) {
    indices_.push_back(batch.example_indices[r]);
    img_.push_back(batch.img.row(static_cast<Eigen::Index>(r)).transpose());
    txt_.push_back(batch.txt.row(static_cast<Eigen::Index>(r)).transpose());
    if (indices_.size() == config_.search_space) out = emit();
  }
  return out;
}

std::optional<std::vector<std::size_t>> GritSampler::flush() {
  if (indices_.empty()) return std::nullopt;
  return emit();
}

BatchSchedule GritSampler::take_schedule() {
  flush();
  BatchSchedule s = next_epoch_schedule(blocks_, config_.batch_size);
  blocks_.clear();
  return s;
}

}  // namespace cosmo::grit
