#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "kvmt/datastore.hpp"
#include "kvmt/linalg.hpp"

namespace testing {

inline kvmt::Matrix gaussian(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
  kvmt::Rng rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  kvmt::Matrix m(rows, cols);
  for (double& x : m.data()) x = g(rng);
  return m;
}

inline kvmt::RawDatastore random_store(std::size_t n, std::size_t dim, std::size_t vocab, std::uint64_t seed) {
  kvmt::Rng rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::uniform_int_distribution<kvmt::TokenId> tok(0, static_cast<kvmt::TokenId>(vocab - 1));
  kvmt::RawDatastore ds(dim);
  std::vector<float> key(dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& x : key) x = g(rng);
    ds.add(key, tok(rng));
  }
  return ds;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("kvmt_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
