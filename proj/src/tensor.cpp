#include "attngan/tensor.hpp"

#include <cstring>

namespace attngan {

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) {
      out += "x";
    }
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::int64_t shape_numel(const Shape& shape) {
  if (shape.empty()) {
    throw ShapeError("shape must have at least one dimension");
  }
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d <= 0) {
      throw ShapeError("non-positive dimension in shape " + shape_str(shape));
    }
    n *= d;
  }
  return n;
}

template <typename T>
bool bitwise_equal(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    return false;
  }
  return std::memcmp(a.data().data(), b.data().data(), a.data().size_bytes()) == 0;
}

template bool bitwise_equal(const BasicTensor<float>&, const BasicTensor<float>&);
template bool bitwise_equal(const BasicTensor<double>&, const BasicTensor<double>&);

}  // namespace attngan
