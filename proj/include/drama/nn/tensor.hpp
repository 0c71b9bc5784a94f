#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "drama/errors.hpp"

namespace drama::nn {

/// Dense row-major matrix of doubles. Scalars are 1x1, row vectors 1xN.
/// Every op output must be finite; NaN/Inf is a hard error.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), v_(rows * cols, 0.0) {}

  static Tensor zeros(std::size_t r, std::size_t c) { return Tensor(r, c); }
  static Tensor full(std::size_t r, std::size_t c, double x) {
    Tensor t(r, c);
    std::fill(t.v_.begin(), t.v_.end(), x);
    return t;
  }
  static Tensor scalar(double x) { return full(1, 1, x); }
  static Tensor row(const std::vector<double>& vals) {
    Tensor t(1, vals.size());
    t.v_ = vals;
    return t;
  }
  static Tensor column(const std::vector<double>& vals) {
    Tensor t(vals.size(), 1);
    t.v_ = vals;
    return t;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }

  double& at(std::size_t r, std::size_t c) { return v_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return v_[r * cols_ + c]; }
  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  std::vector<double>& values() { return v_; }
  const std::vector<double>& values() const { return v_; }

  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  void require_finite(const std::string& what) const {
    for (double x : v_)
      if (!std::isfinite(x)) throw ContractError("non-finite value in " + what);
  }

  std::vector<double> row_values(std::size_t r) const {
    return std::vector<double>(v_.begin() + r * cols_, v_.begin() + (r + 1) * cols_);
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> v_;
};

}  // namespace drama::nn
