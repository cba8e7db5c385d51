#pragma once

#include <cmath>

#include "msfa/rng.hpp"

namespace msfa::detail {

inline Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform_tensor(std::move(shape), -a, a, rng);
}

inline Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in));
  return uniform_tensor(std::move(shape), -a, a, rng);
}

}  // namespace msfa::detail
