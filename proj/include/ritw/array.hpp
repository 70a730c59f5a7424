// Dense double-precision array with row-major storage. Rank 1 and 2 cover
// everything the recurrent models need; rank-1 arrays act as row vectors
// where a 2-D view is required.
#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace ritw {

class Array {
 public:
  Array() = default;
  explicit Array(std::vector<std::size_t> shape);
  Array(std::vector<std::size_t> shape, std::vector<double> data);

  static Array scalar(double v);
  static Array vec(std::vector<double> values);
  static Array matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Array zeros(std::size_t rows, std::size_t cols);
  static Array full(std::size_t rows, std::size_t cols, double v);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool is_scalar() const { return numel() == 1; }

  // 2-D view: rank-1 arrays are 1 x n row vectors.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Array& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  std::string shape_str() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

}  // namespace ritw
