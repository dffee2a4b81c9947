#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace csn {

inline std::string shape_str(const std::vector<std::int64_t>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

// Dense row-major array. Values are immutable once handed to a tape; the
// struct itself is a plain value type.
template <typename T>
struct TensorT {
  std::vector<std::int64_t> shape;
  std::vector<T> data;

  TensorT() = default;
  TensorT(std::vector<std::int64_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    check_shape();
    if (static_cast<std::int64_t>(data.size()) != numel()) {
      throw std::invalid_argument("tensor: value count " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
    }
  }

  static TensorT zeros(std::vector<std::int64_t> s) {
    TensorT t;
    t.shape = std::move(s);
    t.check_shape();
    t.data.assign(static_cast<std::size_t>(t.numel()), T(0));
    return t;
  }
  static TensorT full(std::vector<std::int64_t> s, T v) {
    TensorT t = zeros(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static TensorT scalar(T v) { return TensorT({1}, {v}); }

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto e : shape) n *= e;
    return n;
  }
  int rank() const { return static_cast<int>(shape.size()); }
  std::int64_t rows() const { return shape.at(shape.size() - 2); }
  std::int64_t cols() const { return shape.back(); }

  T& at(std::int64_t i, std::int64_t j) { return data[static_cast<std::size_t>(i * cols() + j)]; }
  T at(std::int64_t i, std::int64_t j) const { return data[static_cast<std::size_t>(i * cols() + j)]; }

  bool all_finite() const {
    for (T v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.shape = shape;
    out.data.reserve(data.size());
    for (T v : data) out.data.push_back(static_cast<U>(v));
    return out;
  }

 private:
  void check_shape() const {
    for (auto e : shape) {
      if (e <= 0) throw std::invalid_argument("tensor: non-positive extent in shape " + shape_str(shape));
    }
    if (shape.empty()) throw std::invalid_argument("tensor: empty shape");
  }
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename T>
using EigenMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using EigenCMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
EigenCMap<T> as_matrix(const TensorT<T>& t, std::int64_t r, std::int64_t c) {
  return EigenCMap<T>(t.data.data(), r, c);
}
template <typename T>
EigenMap<T> as_matrix(TensorT<T>& t, std::int64_t r, std::int64_t c) {
  return EigenMap<T>(t.data.data(), r, c);
}

// C = op(A) * op(B) for rank-2 tensors.
template <typename T>
TensorT<T> t_matmul(const TensorT<T>& a, const TensorT<T>& b, bool ta = false, bool tb = false) {
  if (a.rank() != 2 || b.rank() != 2) throw std::invalid_argument("matmul: rank-2 operands required");
  const std::int64_t m = ta ? a.cols() : a.rows();
  const std::int64_t ka = ta ? a.rows() : a.cols();
  const std::int64_t kb = tb ? b.cols() : b.rows();
  const std::int64_t n = tb ? b.rows() : b.cols();
  if (ka != kb) {
    throw std::invalid_argument("matmul: inner extents differ, " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  }
  TensorT<T> out = TensorT<T>::zeros({m, n});
  auto A = as_matrix(a, a.rows(), a.cols());
  auto B = as_matrix(b, b.rows(), b.cols());
  auto C = as_matrix(out, m, n);
  if (!ta && !tb) C.noalias() = A * B;
  else if (!ta && tb) C.noalias() = A * B.transpose();
  else if (ta && !tb) C.noalias() = A.transpose() * B;
  else C.noalias() = A.transpose() * B.transpose();
  return out;
}

// C += op(A) * op(B), writing into an existing buffer.
template <typename T>
void t_matmul_acc(TensorT<T>& c, const TensorT<T>& a, const TensorT<T>& b, bool ta, bool tb) {
  const std::int64_t m = ta ? a.cols() : a.rows();
  const std::int64_t n = tb ? b.rows() : b.cols();
  auto A = as_matrix(a, a.rows(), a.cols());
  auto B = as_matrix(b, b.rows(), b.cols());
  auto C = as_matrix(c, m, n);
  if (!ta && !tb) C.noalias() += A * B;
  else if (!ta && tb) C.noalias() += A * B.transpose();
  else if (ta && !tb) C.noalias() += A.transpose() * B;
  else C.noalias() += A.transpose() * B.transpose();
}

}  // namespace csn
