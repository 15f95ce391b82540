#pragma once

#include "cosmo/losses.hpp"
#include "cosmo/params.hpp"
#include "cosmo/synthdata.hpp"

#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace cosmo::fixture {

inline synthdata::GenConfig small_gen(std::uint64_t seed, int concepts = 8, int per = 5) {
  synthdata::GenConfig g;
  g.n_concepts = concepts;
  g.examples_per_concept = per;
  g.d_lat = 6;
  g.d_img = 8;
  g.vocab_size = 40;
  g.seq_len = 6;
  g.seed = seed;
  return g;
}

inline ModelDims small_dims(const synthdata::GenConfig& g) {
  ModelDims d;
  d.d_img = g.d_img;
  d.vocab_size = g.vocab_size;
  d.d_tok = 6;
  d.d_proj = 5;
  d.itm_hidden = 7;
  return d;
}

inline std::vector<std::size_t> first_n(std::size_t n, std::size_t start = 0) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), start);
  return v;
}

inline losses::BatchInputs batch_of(const synthdata::SyntheticDataset& ds,
                                    const std::vector<std::size_t>& idx) {
  return {ds.image_rows(idx), ds.text_rows(idx)};
}

// Random subset of size n, in random order.
inline std::vector<std::size_t> random_indices(std::size_t pool, std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> all = first_n(pool);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(n);
  return all;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("cosmo_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace cosmo::fixture
