#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace vlarl::nn {

/// Dense row-major buffer of 64-bit floats.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape_, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape_, std::vector<double> data_);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }

  std::size_t size() const noexcept { return data.size(); }
  /// Leading dimension; 1 for rank-0.
  std::size_t rows() const noexcept { return shape.empty() ? 1 : shape.front(); }
  /// Product of trailing dimensions.
  std::size_t cols() const noexcept;

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols(), cols()};
  }

  bool all_finite() const noexcept;
  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

std::size_t shape_numel(const std::vector<std::size_t>& shape) noexcept;

/// out[m,n] = a[m,k] * b[k,n]. Each output element accumulates over k in
/// increasing order, so a row's result does not depend on how many rows are
/// in the batch.
void matmul_into(std::span<const double> a, std::span<const double> b,
                 std::span<double> out, std::size_t m, std::size_t k, std::size_t n);

/// out[k,n] += a[m,k]^T * g[m,n].
void matmul_tn_accumulate(std::span<const double> a, std::span<const double> g,
                          std::span<double> out, std::size_t m, std::size_t k, std::size_t n);

/// Numerically stable in-place softmax of one row; returns log-sum-exp.
double softmax_inplace(std::span<double> row) noexcept;

}  // namespace vlarl::nn
