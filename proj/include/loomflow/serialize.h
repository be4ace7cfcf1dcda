// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

// Binary tensor encoding shared by the wire protocol and the spill store.
//
//   u8   dead flag (1 = dead, header only)
//   u8   dtype
//   u64  rank                 (little-endian)
//   i64  extents[rank]        (little-endian)
//   raw  row-major payload    (little-endian elements)
//
// A dead value is encoded as the flag byte followed by dtype 0 and rank 0.

#ifndef LOOMFLOW_SERIALIZE_H_
#define LOOMFLOW_SERIALIZE_H_

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "loomflow/tensor.h"

namespace loomflow {

using Bytes = std::vector<std::byte>;

// `value` absent means dead.
void encode_value(const std::optional<Tensor>& value, Bytes* out);
Bytes encode_value(const std::optional<Tensor>& value);

// Decodes one value starting at `*offset` and advances it. Throws ParseError
// on truncated or malformed input.
std::optional<Tensor> decode_value(std::span<const std::byte> data, std::size_t* offset);
std::optional<Tensor> decode_value(std::span<const std::byte> data);

// Little-endian integer helpers.
void put_u32_le(std::uint32_t v, Bytes* out);
void put_u64_le(std::uint64_t v, Bytes* out);
std::uint32_t get_u32_le(std::span<const std::byte> data, std::size_t* offset);
std::uint64_t get_u64_le(std::span<const std::byte> data, std::size_t* offset);

}  // namespace loomflow

#endif  // LOOMFLOW_SERIALIZE_H_
