// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "loomflow/kernels.h"

#include <algorithm>
#include <array>
#include <string>

#include "src/tensor/kernel_common.h"

namespace loomflow {

namespace {

using kernel_internal::broadcast_shape;
using kernel_internal::require_bool;
using kernel_internal::require_numeric;
using kernel_internal::require_same_dtype;

struct KernelInfo {
  KernelKind kind;
  std::string_view name;
  int arity;
};

constexpr std::array<KernelInfo, 18> kKernelTable = {{
    {KernelKind::kConst, "Const", 0},
    {KernelKind::kIdentity, "Identity", 1},
    {KernelKind::kAdd, "Add", 2},
    {KernelKind::kSub, "Sub", 2},
    {KernelKind::kMul, "Mul", 2},
    {KernelKind::kNeg, "Neg", 1},
    {KernelKind::kMatMul, "MatMul", 2},
    {KernelKind::kTranspose, "Transpose", 1},
    {KernelKind::kReduceSumAll, "ReduceSumAll", 1},
    {KernelKind::kFill, "Fill", 2},
    {KernelKind::kLess, "Less", 2},
    {KernelKind::kLessEqual, "LessEqual", 2},
    {KernelKind::kEqual, "Equal", 2},
    {KernelKind::kLogicalAnd, "LogicalAnd", 2},
    {KernelKind::kLogicalNot, "LogicalNot", 1},
    {KernelKind::kShape, "Shape", 1},
    {KernelKind::kSize, "Size", 1},
    {KernelKind::kSumToShape, "SumToShape", 2},
}};

// Elementwise binary op over two same-typed spans with scalar broadcast.
template <typename In, typename Out, typename Fn>
std::vector<Out> binary_loop(std::span<const In> a, std::span<const In> b, std::int64_t n,
                             Fn fn) {
  std::vector<Out> out(static_cast<std::size_t>(n));
  const bool a_scalar = a.size() == 1 && n != 1;
  const bool b_scalar = b.size() == 1 && n != 1;
#pragma omp parallel for if (n > kParallelElementThreshold) schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    out[i] = static_cast<Out>(fn(a[a_scalar ? 0 : i], b[b_scalar ? 0 : i]));
  }
  return out;
}

template <typename Fn>
Tensor arithmetic(KernelKind kind, const Tensor& a, const Tensor& b, Fn fn) {
  require_numeric(kind, a);
  require_same_dtype(kind, a, b);
  Shape shape = broadcast_shape(kind, a, b);
  const std::int64_t n = num_elements(shape);
  if (a.dtype() == DType::kFloat64) {
    return Tensor::f64(std::move(shape), binary_loop<double, double>(a.f64_data(), b.f64_data(), n, fn));
  }
  return Tensor::i64(std::move(shape),
                     binary_loop<std::int64_t, std::int64_t>(a.i64_data(), b.i64_data(), n, fn));
}

template <typename Fn>
Tensor comparison(KernelKind kind, const Tensor& a, const Tensor& b, Fn fn) {
  require_same_dtype(kind, a, b);
  Shape shape = broadcast_shape(kind, a, b);
  const std::int64_t n = num_elements(shape);
  switch (a.dtype()) {
    case DType::kFloat64:
      return Tensor::boolean(std::move(shape),
                             binary_loop<double, std::uint8_t>(a.f64_data(), b.f64_data(), n, fn));
    case DType::kInt64:
      return Tensor::boolean(std::move(shape), binary_loop<std::int64_t, std::uint8_t>(
                                                   a.i64_data(), b.i64_data(), n, fn));
    case DType::kBool:
      return Tensor::boolean(std::move(shape), binary_loop<std::uint8_t, std::uint8_t>(
                                                   a.bool_data(), b.bool_data(), n, fn));
  }
  throw Error(ErrorCode::kInternal, "bad dtype");
}

template <typename T>
std::vector<T> negate(std::span<const T> x) {
  const auto n = static_cast<std::int64_t>(x.size());
  std::vector<T> out(x.size());
#pragma omp parallel for if (n > kParallelElementThreshold) schedule(static)
  for (std::int64_t i = 0; i < n; ++i) out[i] = -x[i];
  return out;
}

// Rows of the output are independent; each entry accumulates over k in order,
// so the result does not depend on the thread count.
template <typename T>
std::vector<T> matmul(std::span<const T> a, std::span<const T> b,
                      const kernel_internal::MatMulDims& d) {
  std::vector<T> out(static_cast<std::size_t>(d.m * d.n), T{0});
#pragma omp parallel for if (d.m * d.k * d.n > kParallelMatMulFlopThreshold) schedule(static)
  for (std::int64_t i = 0; i < d.m; ++i) {
    T* row = out.data() + i * d.n;
    for (std::int64_t p = 0; p < d.k; ++p) {
      const T lhs = a[i * d.k + p];
      const T* rhs = b.data() + p * d.n;
      for (std::int64_t j = 0; j < d.n; ++j) row[j] += lhs * rhs[j];
    }
  }
  return out;
}

template <typename T>
std::vector<T> transpose(std::span<const T> x, std::int64_t rows, std::int64_t cols) {
  std::vector<T> out(x.size());
#pragma omp parallel for if (rows * cols > kParallelElementThreshold) schedule(static)
  for (std::int64_t j = 0; j < cols; ++j) {
    for (std::int64_t i = 0; i < rows; ++i) out[j * rows + i] = x[i * cols + j];
  }
  return out;
}

// Fixed-size blocks summed in parallel, then combined in block order. The
// association is independent of how many threads run.
constexpr std::int64_t kSumBlock = 4096;

template <typename T>
T sum_all(std::span<const T> x) {
  const auto n = static_cast<std::int64_t>(x.size());
  const std::int64_t blocks = (n + kSumBlock - 1) / kSumBlock;
  std::vector<T> partial(static_cast<std::size_t>(blocks), T{0});
#pragma omp parallel for if (n > kParallelElementThreshold) schedule(static)
  for (std::int64_t blk = 0; blk < blocks; ++blk) {
    T acc{0};
    const std::int64_t end = std::min(n, (blk + 1) * kSumBlock);
    for (std::int64_t i = blk * kSumBlock; i < end; ++i) acc += x[i];
    partial[blk] = acc;
  }
  T total{0};
  for (T p : partial) total += p;
  return total;
}

Tensor sum_tensor(const Tensor& x, Shape shape) {
  if (x.dtype() == DType::kFloat64) return Tensor::f64(std::move(shape), {sum_all(x.f64_data())});
  return Tensor::i64(std::move(shape), {sum_all(x.i64_data())});
}

Tensor fill(const Tensor& dims, const Tensor& value) {
  Shape shape = kernel_internal::fill_shape(dims);
  kernel_internal::check_fill_value(value);
  return Tensor::filled(value.dtype(), shape, value.scalar_value());
}

}  // namespace

std::string_view kernel_name(KernelKind kind) {
  for (const auto& info : kKernelTable) {
    if (info.kind == kind) return info.name;
  }
  return "?";
}

std::optional<KernelKind> kernel_from_name(std::string_view name) {
  for (const auto& info : kKernelTable) {
    if (info.name == name) return info.kind;
  }
  return std::nullopt;
}

int kernel_arity(KernelKind kind) {
  for (const auto& info : kKernelTable) {
    if (info.kind == kind) return info.arity;
  }
  return -1;
}

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
      return {arithmetic(kind, in[0], in[1], [](auto x, auto y) { return x + y; })};
    case KernelKind::kSub:
      return {arithmetic(kind, in[0], in[1], [](auto x, auto y) { return x - y; })};
    case KernelKind::kMul:
      return {arithmetic(kind, in[0], in[1], [](auto x, auto y) { return x * y; })};
    case KernelKind::kNeg:
      require_numeric(kind, in[0]);
      if (in[0].dtype() == DType::kFloat64) return {Tensor::f64(in[0].shape(), negate(in[0].f64_data()))};
      return {Tensor::i64(in[0].shape(), negate(in[0].i64_data()))};
    case KernelKind::kMatMul: {
      const auto d = kernel_internal::matmul_dims(in[0], in[1]);
      if (in[0].dtype() == DType::kFloat64) {
        return {Tensor::f64({d.m, d.n}, matmul(in[0].f64_data(), in[1].f64_data(), d))};
      }
      return {Tensor::i64({d.m, d.n}, matmul(in[0].i64_data(), in[1].i64_data(), d))};
    }
    case KernelKind::kTranspose: {
      const Tensor& x = in[0];
      if (x.rank() < 2) return {x};
      if (x.rank() > 2) throw Error(ErrorCode::kShapeMismatch, "Transpose needs rank <= 2");
      const auto rows = x.shape()[0];
      const auto cols = x.shape()[1];
      switch (x.dtype()) {
        case DType::kFloat64: return {Tensor::f64({cols, rows}, transpose(x.f64_data(), rows, cols))};
        case DType::kInt64: return {Tensor::i64({cols, rows}, transpose(x.i64_data(), rows, cols))};
        case DType::kBool: return {Tensor::boolean({cols, rows}, transpose(x.bool_data(), rows, cols))};
      }
      break;
    }
    case KernelKind::kReduceSumAll:
      require_numeric(kind, in[0]);
      return {sum_tensor(in[0], {})};
    case KernelKind::kFill:
      return {fill(in[0], in[1])};
    case KernelKind::kLess:
      require_numeric(kind, in[0]);
      return {comparison(kind, in[0], in[1], [](auto x, auto y) { return x < y; })};
    case KernelKind::kLessEqual:
      require_numeric(kind, in[0]);
      return {comparison(kind, in[0], in[1], [](auto x, auto y) { return x <= y; })};
    case KernelKind::kEqual:
      return {comparison(kind, in[0], in[1], [](auto x, auto y) { return x == y; })};
    case KernelKind::kLogicalAnd:
      require_bool(kind, in[0]);
      return {comparison(kind, in[0], in[1], [](auto x, auto y) { return x && y; })};
    case KernelKind::kLogicalNot: {
      require_bool(kind, in[0]);
      auto x = in[0].bool_data();
      std::vector<std::uint8_t> out(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = !x[i];
      return {Tensor::boolean(in[0].shape(), std::move(out))};
    }
    case KernelKind::kShape:
      return {kernel_internal::shape_of(in[0])};
    case KernelKind::kSize:
      return {Tensor::scalar_int(in[0].num_elements())};
    case KernelKind::kSumToShape: {
      Shape target = kernel_internal::sum_to_target(in[0], in[1]);
      if (target == in[0].shape()) return {in[0]};
      return {sum_tensor(in[0], std::move(target))};
    }
  }
  throw Error(ErrorCode::kInternal, "unhandled kernel " + std::string(kernel_name(kind)));
}

}  // namespace loomflow
