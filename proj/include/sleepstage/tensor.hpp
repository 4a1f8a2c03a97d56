#pragma once

// Dense row-major tensor with 64-bit values. Deliberately minimal: shape +
// flat storage + a few checked helpers. Layer kernels index the flat buffer
// with explicit strides.

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "sleepstage/common.hpp"

namespace sleepstage {

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> s);
  static Tensor zeros(std::vector<std::int64_t> s) { return Tensor(std::move(s)); }
  static Tensor scalar(double x);
  static Tensor from(std::vector<std::int64_t> s, std::vector<double> data);

  std::int64_t numel() const;
  std::int64_t dim(std::size_t i) const;
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  double* data() { return v.data(); }
  const double* data() const { return v.data(); }

  // Checked multi-index access (test/convenience path, not used in hot loops).
  double& at(std::initializer_list<std::int64_t> idx);
  double at(std::initializer_list<std::int64_t> idx) const;

  void fill(double x);
  bool all_finite() const;
  double max_abs() const;
  double sum_squares() const;
};

std::string shape_str(const std::vector<std::int64_t>& shape);

}  // namespace sleepstage
