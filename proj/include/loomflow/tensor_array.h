// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LOOMFLOW_TENSOR_ARRAY_H_
#define LOOMFLOW_TENSOR_ARRAY_H_

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "loomflow/tensor.h"

namespace loomflow {

// Per-run TensorArray instances, addressed by the int64 handle value that
// TensorArrayNew produces. Thread-safe.
//
// Forward arrays are write-once per cell. Gradient arrays accumulate: a
// cell reads as the sum of everything written to it, added in a fixed
// order so the result does not depend on write order, and unwritten cells
// read as zeros.
class TensorArrayStore {
 public:
  std::int64_t create(DType dtype, std::optional<std::int64_t> size, std::optional<Shape> element_shape,
                      bool dynamic_size);
  void write(std::int64_t handle, std::int64_t index, const Tensor& value);
  Tensor read(std::int64_t handle, std::int64_t index);
  void unstack(std::int64_t handle, const Tensor& value);
  Tensor stack(std::int64_t handle);
  std::int64_t size(std::int64_t handle);
  // Gradient array of `handle` for one gradient computation (`source`);
  // created on first use, looked up afterwards.
  std::int64_t grad(std::int64_t handle, const std::string& source);

  std::size_t count() const;

 private:
  struct Array {
    DType dtype = DType::kFloat64;
    std::vector<std::optional<Tensor>> cells;
    // Gradient arrays: every write to each cell, summed on read.
    std::vector<std::vector<Tensor>> addends;
    std::optional<Shape> element_shape;
    bool dynamic_size = false;
    bool is_grad = false;
    std::int64_t forward = -1;  // for gradient arrays
  };

  Array& get(std::int64_t handle);
  void check_index(const Array& a, std::int64_t handle, std::int64_t index);
  Shape cell_shape(const Array& a, std::int64_t index);
  Tensor cell_value(Array& a, std::size_t index);
  void store(Array& a, std::int64_t handle, std::int64_t index, const Tensor& value);

  mutable std::mutex mu_;
  std::map<std::int64_t, Array> arrays_;
  std::map<std::pair<std::int64_t, std::string>, std::int64_t> grads_;
  std::int64_t next_ = 1;
};

// Row `index` of `t` along the leading dimension.
Tensor slice_leading(const Tensor& t, std::int64_t index);
// Stacks equally shaped tensors along a new leading dimension.
Tensor stack_tensors(const std::vector<Tensor>& parts, DType dtype, const Shape& element_shape);

}  // namespace loomflow

#endif  // LOOMFLOW_TENSOR_ARRAY_H_
