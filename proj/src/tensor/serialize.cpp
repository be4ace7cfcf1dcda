// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "loomflow/serialize.h"

#include <bit>
#include <cstring>
#include <string>

#include "loomflow/errors.h"

namespace loomflow {

static_assert(std::endian::native == std::endian::little,
              "payload bytes are copied verbatim; big-endian hosts need swapping");

void put_u32_le(std::uint32_t v, Bytes* out) {
  for (int i = 0; i < 4; ++i) out->push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
}

void put_u64_le(std::uint64_t v, Bytes* out) {
  for (int i = 0; i < 8; ++i) out->push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
}

namespace {

void need(std::span<const std::byte> data, std::size_t offset, std::size_t n) {
  if (offset + n > data.size() || offset + n < offset) {
    throw Error(ErrorCode::kParseError, "truncated tensor encoding");
  }
}

}  // namespace

std::uint32_t get_u32_le(std::span<const std::byte> data, std::size_t* offset) {
  need(data, *offset, 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::to_integer<std::uint32_t>(data[*offset + i]) << (8 * i);
  *offset += 4;
  return v;
}

std::uint64_t get_u64_le(std::span<const std::byte> data, std::size_t* offset) {
  need(data, *offset, 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::to_integer<std::uint64_t>(data[*offset + i]) << (8 * i);
  *offset += 8;
  return v;
}

void encode_value(const std::optional<Tensor>& value, Bytes* out) {
  if (!value) {
    out->push_back(std::byte{1});
    out->push_back(std::byte{0});
    put_u64_le(0, out);
    return;
  }
  out->push_back(std::byte{0});
  out->push_back(static_cast<std::byte>(value->dtype()));
  put_u64_le(static_cast<std::uint64_t>(value->rank()), out);
  for (std::int64_t d : value->shape()) put_u64_le(static_cast<std::uint64_t>(d), out);
  auto payload = value->bytes();
  out->insert(out->end(), payload.begin(), payload.end());
}

Bytes encode_value(const std::optional<Tensor>& value) {
  Bytes out;
  encode_value(value, &out);
  return out;
}

std::optional<Tensor> decode_value(std::span<const std::byte> data, std::size_t* offset) {
  need(data, *offset, 2);
  const auto dead = std::to_integer<std::uint8_t>(data[*offset]);
  const auto dtype_byte = std::to_integer<std::uint8_t>(data[*offset + 1]);
  *offset += 2;
  const std::uint64_t rank = get_u64_le(data, offset);
  if (dead > 1) throw Error(ErrorCode::kParseError, "bad dead flag");
  if (dead) {
    if (rank != 0) throw Error(ErrorCode::kParseError, "dead value with extents");
    return std::nullopt;
  }
  if (dtype_byte > static_cast<std::uint8_t>(DType::kBool)) {
    throw Error(ErrorCode::kParseError, "bad dtype byte " + std::to_string(dtype_byte));
  }
  if (rank > 64) throw Error(ErrorCode::kParseError, "implausible rank");
  Shape shape;
  for (std::uint64_t i = 0; i < rank; ++i) {
    const auto d = static_cast<std::int64_t>(get_u64_le(data, offset));
    if (d < 0) throw Error(ErrorCode::kParseError, "negative extent");
    shape.push_back(d);
  }
  const auto dtype = static_cast<DType>(dtype_byte);
  const auto n = static_cast<std::size_t>(num_elements(shape));
  const std::size_t nbytes = n * dtype_size(dtype);
  need(data, *offset, nbytes);
  const std::byte* src = data.data() + *offset;
  *offset += nbytes;
  switch (dtype) {
    case DType::kFloat64: {
      std::vector<double> v(n);
      std::memcpy(v.data(), src, nbytes);
      return Tensor::f64(std::move(shape), std::move(v));
    }
    case DType::kInt64: {
      std::vector<std::int64_t> v(n);
      std::memcpy(v.data(), src, nbytes);
      return Tensor::i64(std::move(shape), std::move(v));
    }
    case DType::kBool: {
      std::vector<std::uint8_t> v(n);
      std::memcpy(v.data(), src, nbytes);
      return Tensor::boolean(std::move(shape), std::move(v));
    }
  }
  throw Error(ErrorCode::kParseError, "bad dtype");
}

std::optional<Tensor> decode_value(std::span<const std::byte> data) {
  std::size_t offset = 0;
  auto value = decode_value(data, &offset);
  if (offset != data.size()) throw Error(ErrorCode::kParseError, "trailing bytes after tensor");
  return value;
}

}  // namespace loomflow
