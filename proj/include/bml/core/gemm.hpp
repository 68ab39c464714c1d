#pragma once

#include <Eigen/Core>

#include "bml/core/tensor.hpp"

namespace bml {

namespace detail {
template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using CEMap = Eigen::Map<const EMat<T>>;
}  // namespace detail

/// out = a * b
template <typename T>
void matmul(const Mat<T>& a, const Mat<T>& b, Mat<T>& out) {
  check(a.cols == b.rows, "matmul: inner dims ", a.cols, " vs ", b.rows);
  if (out.rows != a.rows || out.cols != b.cols) out = Mat<T>(a.rows, b.cols);
  detail::CEMap<T> ma(a.v.data(), a.rows, a.cols);
  detail::CEMap<T> mb(b.v.data(), b.rows, b.cols);
  detail::EMap<T> mo(out.v.data(), out.rows, out.cols);
  mo.noalias() = ma * mb;
}

/// out = a^T * b
template <typename T>
void matmul_tn(const Mat<T>& a, const Mat<T>& b, Mat<T>& out) {
  check(a.rows == b.rows, "matmul_tn: inner dims ", a.rows, " vs ", b.rows);
  if (out.rows != a.cols || out.cols != b.cols) out = Mat<T>(a.cols, b.cols);
  detail::CEMap<T> ma(a.v.data(), a.rows, a.cols);
  detail::CEMap<T> mb(b.v.data(), b.rows, b.cols);
  detail::EMap<T> mo(out.v.data(), out.rows, out.cols);
  mo.noalias() = ma.transpose() * mb;
}

/// out = a * b^T
template <typename T>
void matmul_nt(const Mat<T>& a, const Mat<T>& b, Mat<T>& out) {
  check(a.cols == b.cols, "matmul_nt: inner dims ", a.cols, " vs ", b.cols);
  if (out.rows != a.rows || out.cols != b.rows) out = Mat<T>(a.rows, b.rows);
  detail::CEMap<T> ma(a.v.data(), a.rows, a.cols);
  detail::CEMap<T> mb(b.v.data(), b.rows, b.cols);
  detail::EMap<T> mo(out.v.data(), out.rows, out.cols);
  mo.noalias() = ma * mb.transpose();
}

/// out += a^T * b (accumulating form used for weight gradients)
template <typename T>
void matmul_tn_acc(const Mat<T>& a, const Mat<T>& b, Mat<T>& out) {
  check(a.rows == b.rows, "matmul_tn_acc: inner dims");
  check(out.rows == a.cols && out.cols == b.cols, "matmul_tn_acc: out shape");
  detail::CEMap<T> ma(a.v.data(), a.rows, a.cols);
  detail::CEMap<T> mb(b.v.data(), b.rows, b.cols);
  detail::EMap<T> mo(out.v.data(), out.rows, out.cols);
  mo.noalias() += ma.transpose() * mb;
}

}  // namespace bml
