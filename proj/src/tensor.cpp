#include "dynkd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>

#include "dynkd/error.hpp"

namespace dynkd {

std::string Shape::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " +
         std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, real fill) : shape_(shape), data_(shape.count(), fill) {}

Tensor::Tensor(Shape shape, std::vector<real> values) : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape_.count()) {
    throw ShapeError("tensor of shape " + shape_.str() + " given " + std::to_string(data_.size()) +
                     " values");
  }
}

void Tensor::fill(real v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.count() != data_.size()) {
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  Tensor out;
  out.shape_ = shape;
  out.data_ = data_;
  return out;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](real v) { return std::isfinite(v); });
}

Tensor gather_samples(const Tensor& source, std::span<const int> indices) {
  Shape s = source.shape();
  const std::size_t per = s.per_sample();
  s.n = static_cast<int>(indices.size());
  Tensor out(s);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int src = indices[i];
    if (src < 0 || src >= source.shape().n) {
      throw InputError("sample index " + std::to_string(src) + " out of range");
    }
    std::memcpy(out.data() + i * per, source.data() + static_cast<std::size_t>(src) * per,
                per * sizeof(real));
  }
  return out;
}

std::uint64_t checksum(std::span<const Tensor* const> tensors) {
  std::uint64_t h = 1469598103934665603ull;
  for (const Tensor* t : tensors) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t->data());
    const std::size_t len = t->size() * sizeof(real);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace dynkd
