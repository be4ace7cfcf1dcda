// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

// Argument checking shared by the parallel and reference kernel sets.

#ifndef LOOMFLOW_SRC_TENSOR_KERNEL_COMMON_H_
#define LOOMFLOW_SRC_TENSOR_KERNEL_COMMON_H_

#include <span>
#include <string>

#include "loomflow/errors.h"
#include "loomflow/kernels.h"
#include "loomflow/tensor.h"

namespace loomflow {
namespace kernel_internal {

inline void check_arity(KernelKind kind, std::span<const Tensor> inputs) {
  const int want = kernel_arity(kind);
  if (static_cast<int>(inputs.size()) != want) {
    throw Error(ErrorCode::kArityError,
                std::string(kernel_name(kind)) + " takes " + std::to_string(want) +
                    " inputs, got " + std::to_string(inputs.size()));
  }
}

inline bool is_numeric(DType d) { return d == DType::kFloat64 || d == DType::kInt64; }

inline void require_numeric(KernelKind kind, const Tensor& t) {
  if (!is_numeric(t.dtype())) {
    throw Error(ErrorCode::kDtypeMismatch,
                std::string(kernel_name(kind)) + " does not accept " +
                    std::string(dtype_name(t.dtype())));
  }
}

inline void require_bool(KernelKind kind, const Tensor& t) {
  if (t.dtype() != DType::kBool) {
    throw Error(ErrorCode::kDtypeMismatch,
                std::string(kernel_name(kind)) + " needs bool, got " +
                    std::string(dtype_name(t.dtype())));
  }
}

inline void require_same_dtype(KernelKind kind, const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype()) {
    throw Error(ErrorCode::kDtypeMismatch,
                std::string(kernel_name(kind)) + " operands differ: " +
                    std::string(dtype_name(a.dtype())) + " vs " +
                    std::string(dtype_name(b.dtype())));
  }
}

// Result shape of a scalar-broadcasting binary op.
inline Shape broadcast_shape(KernelKind kind, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (a.rank() == 0) return b.shape();
  if (b.rank() == 0) return a.shape();
  throw Error(ErrorCode::kShapeMismatch, std::string(kernel_name(kind)) + " operands " +
                                             shape_string(a.shape()) + " and " +
                                             shape_string(b.shape()));
}

struct MatMulDims {
  std::int64_t m, k, n;
};

inline MatMulDims matmul_dims(const Tensor& a, const Tensor& b) {
  require_numeric(KernelKind::kMatMul, a);
  require_same_dtype(KernelKind::kMatMul, a, b);
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw Error(ErrorCode::kShapeMismatch,
                "MatMul operands " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  return {a.shape()[0], a.shape()[1], b.shape()[1]};
}

inline Shape fill_shape(const Tensor& dims) {
  if (dims.dtype() != DType::kInt64 || dims.rank() != 1) {
    throw Error(ErrorCode::kShapeMismatch, "Fill needs an int64 rank-1 shape");
  }
  Shape shape(dims.i64_data().begin(), dims.i64_data().end());
  for (auto d : shape) {
    if (d < 0) throw Error(ErrorCode::kShapeMismatch, "Fill with negative extent");
  }
  return shape;
}

inline void check_fill_value(const Tensor& value) {
  if (value.num_elements() != 1 || value.rank() != 0) {
    throw Error(ErrorCode::kShapeMismatch, "Fill value must be a scalar");
  }
}

inline Shape sum_to_target(const Tensor& g, const Tensor& dims) {
  require_numeric(KernelKind::kSumToShape, g);
  if (dims.dtype() != DType::kInt64 || dims.rank() != 1) {
    throw Error(ErrorCode::kShapeMismatch, "SumToShape needs an int64 rank-1 shape");
  }
  Shape target(dims.i64_data().begin(), dims.i64_data().end());
  if (target != g.shape() && num_elements(target) != 1) {
    throw Error(ErrorCode::kShapeMismatch,
                "cannot sum " + shape_string(g.shape()) + " to " + shape_string(target));
  }
  return target;
}

inline Tensor shape_of(const Tensor& x) {
  return Tensor::i64({static_cast<std::int64_t>(x.rank())}, x.shape());
}

}  // namespace kernel_internal
}  // namespace loomflow

#endif  // LOOMFLOW_SRC_TENSOR_KERNEL_COMMON_H_
