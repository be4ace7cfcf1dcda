// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "loomflow/tensor_array.h"

#include <algorithm>

#include "loomflow/errors.h"
#include "loomflow/kernels.h"

namespace loomflow {

namespace {

template <typename T>
std::vector<T> copy_range(std::span<const T> data, std::int64_t begin, std::int64_t count) {
  return std::vector<T>(data.begin() + begin, data.begin() + begin + count);
}

}  // namespace

Tensor slice_leading(const Tensor& t, std::int64_t index) {
  if (t.rank() < 1) throw Error(ErrorCode::kShapeMismatch, "cannot slice a scalar");
  const std::int64_t rows = t.shape()[0];
  if (index < 0 || index >= rows) throw Error(ErrorCode::kIndexOutOfRange, "row " + std::to_string(index));
  Shape inner_shape(t.shape().begin() + 1, t.shape().end());
  const std::int64_t inner = num_elements(inner_shape);
  switch (t.dtype()) {
    case DType::kFloat64: return Tensor::f64(inner_shape, copy_range(t.f64_data(), index * inner, inner));
    case DType::kInt64: return Tensor::i64(inner_shape, copy_range(t.i64_data(), index * inner, inner));
    case DType::kBool: return Tensor::boolean(inner_shape, copy_range(t.bool_data(), index * inner, inner));
  }
  throw Error(ErrorCode::kInternal, "bad dtype");
}

Tensor stack_tensors(const std::vector<Tensor>& parts, DType dtype, const Shape& element_shape) {
  Shape shape{static_cast<std::int64_t>(parts.size())};
  const Shape& elem = parts.empty() ? element_shape : parts[0].shape();
  shape.insert(shape.end(), elem.begin(), elem.end());
  for (const auto& p : parts) {
    if (p.shape() != elem) {
      throw Error(ErrorCode::kShapeMismatch, "stacking " + shape_string(p.shape()) + " with " + shape_string(elem));
    }
    if (p.dtype() != dtype) throw Error(ErrorCode::kDtypeMismatch, "stacking mixed dtypes");
  }
  switch (dtype) {
    case DType::kFloat64: {
      std::vector<double> out;
      for (const auto& p : parts) out.insert(out.end(), p.f64_data().begin(), p.f64_data().end());
      return Tensor::f64(shape, std::move(out));
    }
    case DType::kInt64: {
      std::vector<std::int64_t> out;
      for (const auto& p : parts) out.insert(out.end(), p.i64_data().begin(), p.i64_data().end());
      return Tensor::i64(shape, std::move(out));
    }
    case DType::kBool: {
      std::vector<std::uint8_t> out;
      for (const auto& p : parts) out.insert(out.end(), p.bool_data().begin(), p.bool_data().end());
      return Tensor::boolean(shape, std::move(out));
    }
  }
  throw Error(ErrorCode::kInternal, "bad dtype");
}

TensorArrayStore::Array& TensorArrayStore::get(std::int64_t handle) {
  auto it = arrays_.find(handle);
  if (it == arrays_.end()) throw Error(ErrorCode::kInvalidGraph, "unknown TensorArray handle " + std::to_string(handle));
  return it->second;
}

std::int64_t TensorArrayStore::create(DType dtype, std::optional<std::int64_t> size,
                                      std::optional<Shape> element_shape, bool dynamic_size) {
  std::lock_guard<std::mutex> lock(mu_);
  if (size && *size < 0) throw Error(ErrorCode::kIndexOutOfRange, "negative TensorArray size");
  Array a;
  a.dtype = dtype;
  a.cells.resize(static_cast<std::size_t>(size.value_or(0)));
  a.element_shape = std::move(element_shape);
  a.dynamic_size = dynamic_size || !size;
  const std::int64_t id = next_++;
  arrays_.emplace(id, std::move(a));
  return id;
}

void TensorArrayStore::check_index(const Array& a, std::int64_t handle, std::int64_t index) {
  if (index < 0 || index >= static_cast<std::int64_t>(a.cells.size())) {
    throw Error(ErrorCode::kIndexOutOfRange, "index " + std::to_string(index) + " outside TensorArray " +
                                                 std::to_string(handle) + " of size " +
                                                 std::to_string(a.cells.size()));
  }
}

void TensorArrayStore::store(Array& a, std::int64_t handle, std::int64_t index, const Tensor& value) {
  if (value.dtype() != a.dtype) {
    throw Error(ErrorCode::kDtypeMismatch, "writing " + std::string(dtype_name(value.dtype())) + " into a " +
                                               std::string(dtype_name(a.dtype)) + " TensorArray");
  }
  if (a.dynamic_size && index >= static_cast<std::int64_t>(a.cells.size())) {
    a.cells.resize(static_cast<std::size_t>(index + 1));
  }
  check_index(a, handle, index);
  if (a.element_shape && *a.element_shape != value.shape()) {
    throw Error(ErrorCode::kShapeMismatch, "TensorArray element shape is " + shape_string(*a.element_shape) +
                                               ", got " + shape_string(value.shape()));
  }
  auto& cell = a.cells[static_cast<std::size_t>(index)];
  if (a.is_grad) {
    if (a.addends.size() < a.cells.size()) a.addends.resize(a.cells.size());
    a.addends[static_cast<std::size_t>(index)].push_back(value);
    cell = value;
    return;
  }
  if (cell) {
    throw Error(ErrorCode::kDoubleWrite, "cell " + std::to_string(index) + " of TensorArray " +
                                             std::to_string(handle) + " written twice");
  }
  cell = value;
}

Tensor TensorArrayStore::cell_value(Array& a, std::size_t index) {
  if (!a.is_grad || a.addends[index].size() < 2) return *a.cells[index];
  auto parts = a.addends[index];
  std::sort(parts.begin(), parts.end(), [](const Tensor& x, const Tensor& y) {
    return std::lexicographical_compare(x.f64_data().begin(), x.f64_data().end(), y.f64_data().begin(),
                                        y.f64_data().end());
  });
  Tensor sum = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const Tensor in[] = {sum, parts[i]};
    sum = eval_kernel(KernelKind::kAdd, in)[0];
  }
  return sum;
}

void TensorArrayStore::write(std::int64_t handle, std::int64_t index, const Tensor& value) {
  std::lock_guard<std::mutex> lock(mu_);
  Array& a = get(handle);
  if (index < 0) check_index(a, handle, index);
  store(a, handle, index, value);
}

Shape TensorArrayStore::cell_shape(const Array& a, std::int64_t index) {
  if (a.element_shape) return *a.element_shape;
  if (a.is_grad) {
    const Array& f = arrays_.at(a.forward);
    if (index < static_cast<std::int64_t>(f.cells.size()) && f.cells[index]) return f.cells[index]->shape();
  }
  throw Error(ErrorCode::kReadBeforeWrite, "element shape of cell " + std::to_string(index) + " is unknown");
}

Tensor TensorArrayStore::read(std::int64_t handle, std::int64_t index) {
  std::lock_guard<std::mutex> lock(mu_);
  Array& a = get(handle);
  check_index(a, handle, index);
  if (a.cells[static_cast<std::size_t>(index)]) return cell_value(a, static_cast<std::size_t>(index));
  if (a.is_grad) return Tensor::zeros(a.dtype, cell_shape(a, index));
  throw Error(ErrorCode::kReadBeforeWrite, "cell " + std::to_string(index) + " of TensorArray " +
                                               std::to_string(handle) + " read before written");
}

void TensorArrayStore::unstack(std::int64_t handle, const Tensor& value) {
  std::lock_guard<std::mutex> lock(mu_);
  Array& a = get(handle);
  if (value.rank() < 1) throw Error(ErrorCode::kShapeMismatch, "cannot unstack a scalar");
  const std::int64_t n = value.shape()[0];
  if (!a.dynamic_size && n > static_cast<std::int64_t>(a.cells.size())) {
    throw Error(ErrorCode::kIndexOutOfRange, "unstacking " + std::to_string(n) + " rows into TensorArray of size " +
                                                 std::to_string(a.cells.size()));
  }
  if (!a.element_shape) a.element_shape = Shape(value.shape().begin() + 1, value.shape().end());
  for (std::int64_t i = 0; i < n; ++i) store(a, handle, i, slice_leading(value, i));
}

Tensor TensorArrayStore::stack(std::int64_t handle) {
  std::lock_guard<std::mutex> lock(mu_);
  Array& a = get(handle);
  std::vector<Tensor> parts;
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    if (a.cells[i]) {
      parts.push_back(cell_value(a, i));
    } else if (a.is_grad) {
      parts.push_back(Tensor::zeros(a.dtype, cell_shape(a, static_cast<std::int64_t>(i))));
    } else {
      throw Error(ErrorCode::kReadBeforeWrite, "stacking TensorArray " + std::to_string(handle) +
                                                   " with unwritten cell " + std::to_string(i));
    }
  }
  if (parts.empty() && !a.element_shape) {
    throw Error(ErrorCode::kShapeMismatch, "cannot stack an empty TensorArray of unknown element shape");
  }
  return stack_tensors(parts, a.dtype, a.element_shape.value_or(Shape{}));
}

std::int64_t TensorArrayStore::size(std::int64_t handle) {
  std::lock_guard<std::mutex> lock(mu_);
  return static_cast<std::int64_t>(get(handle).cells.size());
}

std::int64_t TensorArrayStore::grad(std::int64_t handle, const std::string& source) {
  std::lock_guard<std::mutex> lock(mu_);
  const auto key = std::make_pair(handle, source);
  if (auto it = grads_.find(key); it != grads_.end()) return it->second;
  const Array& f = get(handle);
  Array g;
  g.dtype = f.dtype;
  g.cells.resize(f.cells.size());
  g.element_shape = f.element_shape;
  g.dynamic_size = f.dynamic_size;
  g.is_grad = true;
  g.forward = handle;
  const std::int64_t id = next_++;
  arrays_.emplace(id, std::move(g));
  grads_.emplace(key, id);
  return id;
}

std::size_t TensorArrayStore::count() const {
  std::lock_guard<std::mutex> lock(mu_);
  return arrays_.size();
}

}  // namespace loomflow
