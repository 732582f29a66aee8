#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedsem {

// Dense row-major tensor of doubles. The whole pipeline stores values in
// double precision; narrowing to float32 happens only at the snapshot wire
// format and to 8-bit at PNG export.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

  Tensor(std::vector<int64_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != checked_numel(shape_))
      throw std::invalid_argument("Tensor: data size does not match shape");
  }

  static Tensor full(std::vector<int64_t> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor scalar(double v) { return full({1}, v); }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t ndim() const { return shape_.size(); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // 2-D accessors (row-major), valid for any tensor whose trailing two dims
  // are (rows, cols) with all leading dims folded by the caller.
  double& at2(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * shape_.back() + c)]; }
  double at2(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * shape_.back() + c)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(std::vector<int64_t> new_shape) const {
    if (checked_numel(new_shape) != numel())
      throw std::invalid_argument("Tensor::reshaped: element count mismatch");
    return Tensor(std::move(new_shape), data_);
  }

  void add_scaled(const Tensor& o, double s) {
    require_same_shape(o, "add_scaled");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
  }

  void scale(double s) {
    for (auto& v : data_) v *= s;
  }

  double sum() const {
    double acc = 0.0;
    for (double v : data_) acc += v;
    return acc;
  }

  double squared_norm() const {
    double acc = 0.0;
    for (double v : data_) acc += v * v;
    return acc;
  }

  double dot(const Tensor& o) const {
    require_same_shape(o, "dot");
    double acc = 0.0;
    for (size_t i = 0; i < data_.size(); ++i) acc += data_[i] * o.data_[i];
    return acc;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::fabs(v));
    return m;
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << "]";
    return os.str();
  }

  void require_same_shape(const Tensor& o, const char* who) const {
    if (!same_shape(o))
      throw std::invalid_argument(std::string(who) + ": shape mismatch " + shape_str() +
                                  " vs " + o.shape_str());
  }

 private:
  static int64_t checked_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      if (d <= 0) throw std::invalid_argument("Tensor: nonpositive dimension");
      n *= d;
    }
    return shape.empty() ? 0 : n;
  }

  std::vector<int64_t> shape_;
  std::vector<double> data_;
};

}  // namespace fedsem
