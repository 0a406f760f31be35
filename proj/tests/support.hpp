#pragma once

// Shared fixtures for the unit and acceptance tests.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "dynkd/tensor.hpp"

namespace dynkd::testing {

inline Tensor random_tensor(Shape s, std::uint64_t seed, real scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<real> dist(0.0, scale);
  Tensor t(s);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

inline std::vector<int> random_labels(int n, int classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dist(0, classes - 1);
  std::vector<int> out(n);
  for (auto& v : out) v = dist(rng);
  return out;
}

inline real max_abs_diff(const Tensor& a, const Tensor& b) {
  real m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Worst relative error between an analytic gradient and central differences
/// of `f` around `x`, checked on up to `probes` coordinates. Relative error is
/// |a - n| / max(|a| + |n|, floor).
inline real finite_difference_error(Tensor& x, const Tensor& analytic,
                                    const std::function<real()>& f, int probes = 64,
                                    real h = 1e-5, real floor = 1e-8, std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
  const int count = std::min<int>(probes, static_cast<int>(x.size()));
  real worst = 0.0;
  for (int p = 0; p < count; ++p) {
    const std::size_t i = count == static_cast<int>(x.size()) ? static_cast<std::size_t>(p)
                                                               : pick(rng);
    const real saved = x[i];
    x[i] = saved + h;
    const real up = f();
    x[i] = saved - h;
    const real down = f();
    x[i] = saved;
    const real numeric = (up - down) / (2.0 * h);
    const real denom = std::max(std::abs(analytic[i]) + std::abs(numeric), floor);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("dynkd_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Writes a CIFAR-style binary file: per record `label_bytes` label bytes
/// (label at `label_index`) followed by 3072 pixel bytes.
inline void write_fake_cifar(const std::filesystem::path& file, int records, int classes,
                             int label_bytes, int label_index, std::uint64_t seed) {
  std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> byte(0, 255);
  for (int r = 0; r < records; ++r) {
    for (int b = 0; b < label_bytes; ++b) {
      const int v = b == label_index ? r % classes : 0;
      out.put(static_cast<char>(v));
    }
    for (int p = 0; p < 3072; ++p) out.put(static_cast<char>(byte(rng)));
  }
}

}  // namespace dynkd::testing
