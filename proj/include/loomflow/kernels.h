// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LOOMFLOW_KERNELS_H_
#define LOOMFLOW_KERNELS_H_

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "loomflow/tensor.h"

namespace loomflow {

// Primitive compute kernels. Output rules:
//
//   Const                        -> the node's stored value
//   Identity(x)                  -> x
//   Add/Sub/Mul(a, b)            -> numeric; shapes equal, or one side scalar
//   Neg(x)                       -> numeric, shape of x
//   MatMul(a[m,k], b[k,n])       -> [m,n]
//   Transpose(x[m,n])            -> [n,m]; rank < 2 passes through
//   ReduceSumAll(x)              -> rank-0 sum of all elements
//   Fill(shape:int64[r], v[])    -> tensor of `shape` with every element v
//   Less/LessEqual(a, b)         -> bool, numeric operands
//   Equal(a, b)                  -> bool, any matching dtype
//   LogicalAnd(a, b), LogicalNot -> bool
//   Shape(x)                     -> int64[rank(x)]
//   Size(x)                      -> int64 scalar
//   SumToShape(g, shape:int64[r])-> g summed down to `shape`; `shape` must
//                                   equal g's shape or describe one element.
//                                   Used by gradients of scalar broadcasts.
enum class KernelKind {
  kConst,
  kIdentity,
  kAdd,
  kSub,
  kMul,
  kNeg,
  kMatMul,
  kTranspose,
  kReduceSumAll,
  kFill,
  kLess,
  kLessEqual,
  kEqual,
  kLogicalAnd,
  kLogicalNot,
  kShape,
  kSize,
  kSumToShape,
};

inline constexpr KernelKind kAllKernelKinds[] = {
    KernelKind::kConst,      KernelKind::kIdentity,     KernelKind::kAdd,
    KernelKind::kSub,        KernelKind::kMul,          KernelKind::kNeg,
    KernelKind::kMatMul,     KernelKind::kTranspose,    KernelKind::kReduceSumAll,
    KernelKind::kFill,       KernelKind::kLess,         KernelKind::kLessEqual,
    KernelKind::kEqual,      KernelKind::kLogicalAnd,   KernelKind::kLogicalNot,
    KernelKind::kShape,      KernelKind::kSize,         KernelKind::kSumToShape,
};

std::string_view kernel_name(KernelKind kind);
std::optional<KernelKind> kernel_from_name(std::string_view name);
int kernel_arity(KernelKind kind);

// Evaluates one kernel. `const_value` supplies the payload for kConst and is
// ignored otherwise. Pure and thread-safe.
std::vector<Tensor> eval_kernel(KernelKind kind, std::span<const Tensor> inputs,
                                const Tensor* const_value = nullptr);

// Element counts above which the OpenMP paths fan out.
inline constexpr std::int64_t kParallelElementThreshold = 1 << 15;
inline constexpr std::int64_t kParallelMatMulFlopThreshold = 1 << 16;

namespace reference {

// Straightforward single-threaded kernels with the same contract as
// eval_kernel. Kept as the testing oracle and benchmark baseline.
std::vector<Tensor> eval_kernel(KernelKind kind, std::span<const Tensor> inputs,
                                const Tensor* const_value = nullptr);

}  // namespace reference

}  // namespace loomflow

#endif  // LOOMFLOW_KERNELS_H_
