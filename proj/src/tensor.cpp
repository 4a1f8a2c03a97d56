#include "sleepstage/tensor.hpp"

#include <cmath>

namespace sleepstage {

Tensor::Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
  std::int64_t n = 1;
  for (auto e : shape) {
    check(e > 0, ErrorKind::validation, "tensor extent must be positive");
    n *= e;
  }
  v.assign(static_cast<std::size_t>(n), 0.0);
}

Tensor Tensor::scalar(double x) {
  Tensor t({1});
  t.v[0] = x;
  return t;
}

Tensor Tensor::from(std::vector<std::int64_t> s, std::vector<double> data) {
  Tensor t(std::move(s));
  check(static_cast<std::int64_t>(data.size()) == t.numel(), ErrorKind::validation,
        "tensor data length does not match shape");
  t.v = std::move(data);
  return t;
}

std::int64_t Tensor::numel() const {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return shape.empty() ? 0 : n;
}

std::int64_t Tensor::dim(std::size_t i) const {
  check(i < shape.size(), ErrorKind::internal, "tensor dim index out of range");
  return shape[i];
}

namespace {
std::size_t flat_index(const std::vector<std::int64_t>& shape,
                       std::initializer_list<std::int64_t> idx) {
  check(idx.size() == shape.size(), ErrorKind::internal, "tensor rank mismatch in at()");
  std::int64_t flat = 0;
  std::size_t d = 0;
  for (auto i : idx) {
    check(i >= 0 && i < shape[d], ErrorKind::internal, "tensor index out of range");
    flat = flat * shape[d] + i;
    ++d;
  }
  return static_cast<std::size_t>(flat);
}
}  // namespace

double& Tensor::at(std::initializer_list<std::int64_t> idx) {
  return v[flat_index(shape, idx)];
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
  return v[flat_index(shape, idx)];
}

void Tensor::fill(double x) {
  for (auto& e : v) e = x;
}

bool Tensor::all_finite() const {
  for (auto e : v)
    if (!std::isfinite(e)) return false;
  return true;
}

double Tensor::max_abs() const {
  double m = 0;
  for (auto e : v) m = std::max(m, std::fabs(e));
  return m;
}

double Tensor::sum_squares() const {
  double s = 0;
  for (auto e : v) s += e * e;
  return s;
}

std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace sleepstage
