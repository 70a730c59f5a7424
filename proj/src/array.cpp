#include "ritw/array.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "ritw/error.hpp"

namespace ritw {

namespace {
std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return n;
}
}  // namespace

Array::Array(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

Array::Array(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require(shape_numel(shape_) == data_.size(), "array: shape/data mismatch: shape ",
          shape_str(), " vs ", data_.size(), " values");
}

Array Array::scalar(double v) { return Array({1}, {v}); }

Array Array::vec(std::vector<double> values) {
  std::size_t n = values.size();
  return Array({n}, std::move(values));
}

Array Array::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Array({rows, cols}, std::move(data));
}

Array Array::zeros(std::size_t rows, std::size_t cols) { return Array({rows, cols}); }

Array Array::full(std::size_t rows, std::size_t cols, double v) {
  return Array({rows, cols}, std::vector<double>(rows * cols, v));
}

std::size_t Array::rows() const { return ndim() >= 2 ? shape_[0] : 1; }

std::size_t Array::cols() const {
  if (ndim() == 0) return 1;
  return ndim() >= 2 ? shape_[1] : shape_[0];
}

bool Array::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Array::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << "x";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

}  // namespace ritw
