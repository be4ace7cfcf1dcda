// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <string>

#include "loomflow/kernels.h"
#include "src/tensor/kernel_common.h"

namespace loomflow {
namespace reference {

namespace {

using kernel_internal::broadcast_shape;
using kernel_internal::require_bool;
using kernel_internal::require_numeric;
using kernel_internal::require_same_dtype;

// Everything goes through doubles and is converted back to the result dtype.
// Exact for int64 values below 2^53, which is all the tests feed it.
Tensor make(DType dtype, Shape shape, const std::vector<double>& values) {
  switch (dtype) {
    case DType::kFloat64:
      return Tensor::f64(std::move(shape), values);
    case DType::kInt64: {
      std::vector<std::int64_t> out(values.begin(), values.end());
      return Tensor::i64(std::move(shape), std::move(out));
    }
    case DType::kBool: {
      std::vector<std::uint8_t> out;
      for (double v : values) out.push_back(v != 0.0);
      return Tensor::boolean(std::move(shape), std::move(out));
    }
  }
  throw Error(ErrorCode::kInternal, "bad dtype");
}

template <typename Fn>
Tensor binary(KernelKind kind, const Tensor& a, const Tensor& b, DType out_dtype, Fn fn) {
  require_same_dtype(kind, a, b);
  Shape shape = broadcast_shape(kind, a, b);
  const std::int64_t n = num_elements(shape);
  std::vector<double> out;
  for (std::int64_t i = 0; i < n; ++i) {
    const double x = a.element(a.num_elements() == n ? i : 0);
    const double y = b.element(b.num_elements() == n ? i : 0);
    out.push_back(fn(x, y));
  }
  return make(out_dtype, std::move(shape), out);
}

}  // namespace

std::vector<Tensor> eval_kernel(KernelKind kind, std::span<const Tensor> in,
                                const Tensor* const_value) {
  kernel_internal::check_arity(kind, in);
  switch (kind) {
    case KernelKind::kConst:
      if (const_value == nullptr) throw Error(ErrorCode::kInternal, "Const without a value");
      return {*const_value};
    case KernelKind::kIdentity:
      return {in[0]};
    case KernelKind::kAdd:
      require_numeric(kind, in[0]);
      return {binary(kind, in[0], in[1], in[0].dtype(), [](double x, double y) { return x + y; })};
    case KernelKind::kSub:
      require_numeric(kind, in[0]);
      return {binary(kind, in[0], in[1], in[0].dtype(), [](double x, double y) { return x - y; })};
    case KernelKind::kMul:
      require_numeric(kind, in[0]);
      return {binary(kind, in[0], in[1], in[0].dtype(), [](double x, double y) { return x * y; })};
    case KernelKind::kNeg: {
      require_numeric(kind, in[0]);
      std::vector<double> out;
      for (std::int64_t i = 0; i < in[0].num_elements(); ++i) out.push_back(-in[0].element(i));
      return {make(in[0].dtype(), in[0].shape(), out)};
    }
    case KernelKind::kMatMul: {
      const auto d = kernel_internal::matmul_dims(in[0], in[1]);
      std::vector<double> out(static_cast<std::size_t>(d.m * d.n), 0.0);
      for (std::int64_t i = 0; i < d.m; ++i) {
        for (std::int64_t j = 0; j < d.n; ++j) {
          double acc = 0.0;
          for (std::int64_t p = 0; p < d.k; ++p) {
            acc += in[0].element(i * d.k + p) * in[1].element(p * d.n + j);
          }
          out[i * d.n + j] = acc;
        }
      }
      return {make(in[0].dtype(), {d.m, d.n}, out)};
    }
    case KernelKind::kTranspose: {
      const Tensor& x = in[0];
      if (x.rank() < 2) return {x};
      if (x.rank() > 2) throw Error(ErrorCode::kShapeMismatch, "Transpose needs rank <= 2");
      const auto rows = x.shape()[0];
      const auto cols = x.shape()[1];
      std::vector<double> out;
      for (std::int64_t j = 0; j < cols; ++j) {
        for (std::int64_t i = 0; i < rows; ++i) out.push_back(x.element(i * cols + j));
      }
      return {make(x.dtype(), {cols, rows}, out)};
    }
    case KernelKind::kReduceSumAll: {
      require_numeric(kind, in[0]);
      double acc = 0.0;
      for (std::int64_t i = 0; i < in[0].num_elements(); ++i) acc += in[0].element(i);
      return {make(in[0].dtype(), {}, {acc})};
    }
    case KernelKind::kFill: {
      Shape shape = kernel_internal::fill_shape(in[0]);
      kernel_internal::check_fill_value(in[1]);
      std::vector<double> out(static_cast<std::size_t>(num_elements(shape)), in[1].element(0));
      return {make(in[1].dtype(), std::move(shape), out)};
    }
    case KernelKind::kLess:
      require_numeric(kind, in[0]);
      return {binary(kind, in[0], in[1], DType::kBool, [](double x, double y) { return x < y; })};
    case KernelKind::kLessEqual:
      require_numeric(kind, in[0]);
      return {binary(kind, in[0], in[1], DType::kBool, [](double x, double y) { return x <= y; })};
    case KernelKind::kEqual:
      return {binary(kind, in[0], in[1], DType::kBool, [](double x, double y) { return x == y; })};
    case KernelKind::kLogicalAnd:
      require_bool(kind, in[0]);
      return {binary(kind, in[0], in[1], DType::kBool,
                     [](double x, double y) { return x != 0.0 && y != 0.0; })};
    case KernelKind::kLogicalNot: {
      require_bool(kind, in[0]);
      std::vector<double> out;
      for (std::int64_t i = 0; i < in[0].num_elements(); ++i) out.push_back(in[0].element(i) == 0.0);
      return {make(DType::kBool, in[0].shape(), out)};
    }
    case KernelKind::kShape:
      return {kernel_internal::shape_of(in[0])};
    case KernelKind::kSize:
      return {Tensor::scalar_int(in[0].num_elements())};
    case KernelKind::kSumToShape: {
      Shape target = kernel_internal::sum_to_target(in[0], in[1]);
      if (target == in[0].shape()) return {in[0]};
      double acc = 0.0;
      for (std::int64_t i = 0; i < in[0].num_elements(); ++i) acc += in[0].element(i);
      return {make(in[0].dtype(), std::move(target), {acc})};
    }
  }
  throw Error(ErrorCode::kInternal, "unhandled kernel " + std::string(kernel_name(kind)));
}

}  // namespace reference
}  // namespace loomflow
