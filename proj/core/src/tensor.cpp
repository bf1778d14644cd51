#include "capsnet/tensor.hpp"

#include <cmath>

namespace capsnet {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_product(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

void require_rank(const Shape& shape, std::size_t rank, const char* what) {
  if (shape.size() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_string(shape));
  }
}

bool all_finite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor to_double(const FloatTensor& t) {
  std::vector<double> data(t.data().begin(), t.data().end());
  return Tensor(t.shape(), std::move(data));
}

FloatTensor to_float(const Tensor& t) {
  std::vector<float> data(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) data[i] = static_cast<float>(t[i]);
  return FloatTensor(t.shape(), std::move(data));
}

}  // namespace capsnet
