// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LOOMFLOW_TENSOR_H_
#define LOOMFLOW_TENSOR_H_

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace loomflow {

enum class DType : std::uint8_t { kFloat64 = 0, kInt64 = 1, kBool = 2 };

std::string_view dtype_name(DType dtype);
std::optional<DType> dtype_from_name(std::string_view name);
std::size_t dtype_size(DType dtype);

using Shape = std::vector<std::int64_t>;

std::int64_t num_elements(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major tensor. Element storage is shared and immutable once
// constructed, so copies are cheap and safe to hand across threads.
class Tensor {
 public:
  // float64 scalar zero.
  Tensor();

  static Tensor scalar(double value);
  static Tensor scalar_int(std::int64_t value);
  static Tensor scalar_bool(bool value);

  static Tensor f64(Shape shape, std::vector<double> data);
  static Tensor i64(Shape shape, std::vector<std::int64_t> data);
  static Tensor boolean(Shape shape, std::vector<std::uint8_t> data);

  static Tensor filled(DType dtype, const Shape& shape, double value);
  static Tensor zeros(DType dtype, const Shape& shape) {
    return filled(dtype, shape, 0.0);
  }

  DType dtype() const { return dtype_; }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t num_elements() const;
  std::size_t byte_size() const;

  std::span<const double> f64_data() const;
  std::span<const std::int64_t> i64_data() const;
  std::span<const std::uint8_t> bool_data() const;

  // Raw little-endian element bytes.
  std::span<const std::byte> bytes() const;

  // Element i converted to double regardless of dtype.
  double element(std::int64_t i) const;

  // Scalar accessors; throw unless the tensor holds exactly one element.
  double scalar_value() const;
  std::int64_t scalar_int_value() const;
  bool scalar_bool_value() const;

  // Bit-identical comparison of dtype, shape and payload.
  bool identical(const Tensor& other) const;
  bool operator==(const Tensor& other) const { return identical(other); }

  // "float64 [2,2] 1 2 3 4"
  std::string debug_string() const;

 private:
  using Storage = std::variant<std::vector<double>, std::vector<std::int64_t>,
                               std::vector<std::uint8_t>>;
  Tensor(DType dtype, Shape shape, std::shared_ptr<const Storage> storage);

  DType dtype_;
  Shape shape_;
  std::shared_ptr<const Storage> storage_;
};

// Shortest decimal text that round-trips through strtod.
std::string format_double(double value);

}  // namespace loomflow

#endif  // LOOMFLOW_TENSOR_H_
