#include "layoutmuse/autodiff/tensor.hpp"

#include <cmath>
#include <sstream>

namespace layoutmuse::ad {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeMismatch("negative extent in shape");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  for (T v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace layoutmuse::ad
