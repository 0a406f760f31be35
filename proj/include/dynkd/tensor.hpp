#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dynkd {

using real = double;

// NCHW extent. Matrices and logit batches use (n, c, 1, 1).
struct Shape {
  int n = 0;
  int c = 0;
  int h = 1;
  int w = 1;

  std::size_t count() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t per_sample() const { return static_cast<std::size_t>(c) * h * w; }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, real fill = 0.0);
  Tensor(Shape shape, std::vector<real> values);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  real* data() { return data_.data(); }
  const real* data() const { return data_.data(); }
  std::span<real> values() { return data_; }
  std::span<const real> values() const { return data_; }

  std::span<real> sample(int i) {
    return {data_.data() + i * shape_.per_sample(), shape_.per_sample()};
  }
  std::span<const real> sample(int i) const {
    return {data_.data() + i * shape_.per_sample(), shape_.per_sample()};
  }

  real& operator[](std::size_t i) { return data_[i]; }
  real operator[](std::size_t i) const { return data_[i]; }

  real& at(int n, int c, int h = 0, int w = 0) {
    return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  real at(int n, int c, int h = 0, int w = 0) const {
    return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }

  void fill(real v);
  // Same storage, new extent; element count must match.
  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

 private:
  Shape shape_{};
  std::vector<real> data_;
};

// Copies the listed samples (in order) of a batch tensor into a new batch.
Tensor gather_samples(const Tensor& source, std::span<const int> indices);

// 64-bit FNV-1a over the raw bytes of the given tensors.
std::uint64_t checksum(std::span<const Tensor* const> tensors);

}  // namespace dynkd
