#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace cblm {

// Dense row-major matrix. Vectors are rows (1 x n) or columns (n x 1).
template <typename S>
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<S> v;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, S(0)) {}

  static Tensor zeros(int r, int c) { return Tensor(r, c); }

  S* row(int r) { return v.data() + static_cast<std::size_t>(r) * cols; }
  const S* row(int r) const { return v.data() + static_cast<std::size_t>(r) * cols; }
  S& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  S at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }

  std::size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

  void fill(S x) { std::fill(v.begin(), v.end(), x); }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out(rows, cols);
    for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<T>(v[i]);
    return out;
  }
};

// Named parameter with its gradient accumulator.
template <typename S>
struct Param {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;

  Param() = default;
  Param(std::string n, int r, int c) : name(std::move(n)), value(r, c), grad(r, c) {}

  void zero_grad() { grad.fill(S(0)); }
};

}  // namespace cblm
