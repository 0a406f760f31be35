#pragma once

#include <string>

#include "dynkd/tensor.hpp"

namespace dynkd {

// A trainable tensor and its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool weight_decay = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool decay = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), weight_decay(decay) {}

  void zero_grad() { grad.fill(0.0); }
};

}  // namespace dynkd
