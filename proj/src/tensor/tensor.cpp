// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "loomflow/tensor.h"

#include <charconv>
#include <cstring>
#include <sstream>

#include "loomflow/errors.h"

namespace loomflow {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kDtypeMismatch: return "DtypeMismatch";
    case ErrorCode::kArityError: return "ArityError";
    case ErrorCode::kDuplicateId: return "DuplicateId";
    case ErrorCode::kDanglingInput: return "DanglingInput";
    case ErrorCode::kInvalidGraph: return "InvalidGraph";
    case ErrorCode::kBranchArityMismatch: return "BranchArityMismatch";
    case ErrorCode::kBranchDtypeMismatch: return "BranchDtypeMismatch";
    case ErrorCode::kArityMismatch: return "ArityMismatch";
    case ErrorCode::kNonBooleanPredicate: return "NonBooleanPredicate";
    case ErrorCode::kDoubleWrite: return "DoubleWrite";
    case ErrorCode::kReadBeforeWrite: return "ReadBeforeWrite";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kNonScalarObjective: return "NonScalarObjective";
    case ErrorCode::kNoGradient: return "NoGradient";
    case ErrorCode::kMissingFeed: return "MissingFeed";
    case ErrorCode::kRuntimeKernelError: return "RuntimeKernelError";
    case ErrorCode::kDeadlockDetected: return "DeadlockDetected";
    case ErrorCode::kTagMismatch: return "TagMismatch";
    case ErrorCode::kPopEmpty: return "PopEmpty";
    case ErrorCode::kSpillStoreFull: return "SpillStoreFull";
    case ErrorCode::kOutOfBudget: return "OutOfBudget";
    case ErrorCode::kUnknownDevice: return "UnknownDevice";
    case ErrorCode::kTransportClosed: return "TransportClosed";
    case ErrorCode::kRemoteKernelError: return "RemoteKernelError";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kInternal: return "Internal";
  }
  return "Unknown";
}

std::string_view dtype_name(DType dtype) {
  switch (dtype) {
    case DType::kFloat64: return "float64";
    case DType::kInt64: return "int64";
    case DType::kBool: return "bool";
  }
  return "?";
}

std::optional<DType> dtype_from_name(std::string_view name) {
  if (name == "float64") return DType::kFloat64;
  if (name == "int64") return DType::kInt64;
  if (name == "bool" || name == "boolean") return DType::kBool;
  return std::nullopt;
}

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::kFloat64: return sizeof(double);
    case DType::kInt64: return sizeof(std::int64_t);
    case DType::kBool: return 1;
  }
  return 0;
}

std::int64_t num_elements(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(shape[i]);
  }
  out += ']';
  return out;
}

std::string format_double(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

namespace {

void check_shape(const Shape& shape, std::size_t data_size) {
  for (std::int64_t d : shape) {
    if (d < 0) throw Error(ErrorCode::kShapeMismatch, "negative extent in " + shape_string(shape));
  }
  if (static_cast<std::size_t>(num_elements(shape)) != data_size) {
    throw Error(ErrorCode::kShapeMismatch,
                "shape " + shape_string(shape) + " needs " +
                    std::to_string(num_elements(shape)) + " elements, got " +
                    std::to_string(data_size));
  }
}

}  // namespace

Tensor::Tensor()
    : Tensor(DType::kFloat64, {}, std::make_shared<const Storage>(std::vector<double>{0.0})) {}

Tensor::Tensor(DType dtype, Shape shape, std::shared_ptr<const Storage> storage)
    : dtype_(dtype), shape_(std::move(shape)), storage_(std::move(storage)) {}

Tensor Tensor::scalar(double value) { return f64({}, {value}); }
Tensor Tensor::scalar_int(std::int64_t value) { return i64({}, {value}); }
Tensor Tensor::scalar_bool(bool value) { return boolean({}, {static_cast<std::uint8_t>(value)}); }

Tensor Tensor::f64(Shape shape, std::vector<double> data) {
  check_shape(shape, data.size());
  return Tensor(DType::kFloat64, std::move(shape), std::make_shared<const Storage>(std::move(data)));
}

Tensor Tensor::i64(Shape shape, std::vector<std::int64_t> data) {
  check_shape(shape, data.size());
  return Tensor(DType::kInt64, std::move(shape), std::make_shared<const Storage>(std::move(data)));
}

Tensor Tensor::boolean(Shape shape, std::vector<std::uint8_t> data) {
  check_shape(shape, data.size());
  for (auto& b : data) b = b ? 1 : 0;
  return Tensor(DType::kBool, std::move(shape), std::make_shared<const Storage>(std::move(data)));
}

Tensor Tensor::filled(DType dtype, const Shape& shape, double value) {
  const auto n = static_cast<std::size_t>(loomflow::num_elements(shape));
  switch (dtype) {
    case DType::kFloat64: return f64(shape, std::vector<double>(n, value));
    case DType::kInt64: return i64(shape, std::vector<std::int64_t>(n, static_cast<std::int64_t>(value)));
    case DType::kBool: return boolean(shape, std::vector<std::uint8_t>(n, value != 0.0));
  }
  throw Error(ErrorCode::kInternal, "bad dtype");
}

std::int64_t Tensor::num_elements() const { return loomflow::num_elements(shape_); }

std::size_t Tensor::byte_size() const {
  return static_cast<std::size_t>(num_elements()) * dtype_size(dtype_);
}

std::span<const double> Tensor::f64_data() const {
  if (dtype_ != DType::kFloat64) throw Error(ErrorCode::kDtypeMismatch, "tensor is not float64");
  return std::get<std::vector<double>>(*storage_);
}

std::span<const std::int64_t> Tensor::i64_data() const {
  if (dtype_ != DType::kInt64) throw Error(ErrorCode::kDtypeMismatch, "tensor is not int64");
  return std::get<std::vector<std::int64_t>>(*storage_);
}

std::span<const std::uint8_t> Tensor::bool_data() const {
  if (dtype_ != DType::kBool) throw Error(ErrorCode::kDtypeMismatch, "tensor is not bool");
  return std::get<std::vector<std::uint8_t>>(*storage_);
}

std::span<const std::byte> Tensor::bytes() const {
  return std::visit(
      [](const auto& v) { return std::as_bytes(std::span(v.data(), v.size())); }, *storage_);
}

double Tensor::element(std::int64_t i) const {
  return std::visit([i](const auto& v) { return static_cast<double>(v[static_cast<std::size_t>(i)]); },
                    *storage_);
}

double Tensor::scalar_value() const {
  if (num_elements() != 1) throw Error(ErrorCode::kShapeMismatch, "expected a single element, got " + shape_string(shape_));
  return element(0);
}

std::int64_t Tensor::scalar_int_value() const {
  if (num_elements() != 1) throw Error(ErrorCode::kShapeMismatch, "expected a single element, got " + shape_string(shape_));
  if (dtype_ == DType::kInt64) return i64_data()[0];
  return static_cast<std::int64_t>(element(0));
}

bool Tensor::scalar_bool_value() const {
  if (num_elements() != 1) throw Error(ErrorCode::kShapeMismatch, "expected a single element, got " + shape_string(shape_));
  return element(0) != 0.0;
}

bool Tensor::identical(const Tensor& other) const {
  if (dtype_ != other.dtype_ || shape_ != other.shape_) return false;
  auto a = bytes();
  auto b = other.bytes();
  return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size()) == 0);
}

std::string Tensor::debug_string() const {
  std::string out(dtype_name(dtype_));
  out += ' ';
  out += shape_string(shape_);
  const std::int64_t n = num_elements();
  for (std::int64_t i = 0; i < n; ++i) {
    out += ' ';
    switch (dtype_) {
      case DType::kFloat64: out += format_double(f64_data()[i]); break;
      case DType::kInt64: out += std::to_string(i64_data()[i]); break;
      case DType::kBool: out += bool_data()[i] ? "true" : "false"; break;
    }
  }
  return out;
}

}  // namespace loomflow
