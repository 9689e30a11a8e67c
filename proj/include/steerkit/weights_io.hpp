#pragma once

// Binary weight file ("STKW1"), all integers little-endian:
//
//   magic        5 bytes  "STKW1"
//   config       u32 n_layers, d_model, n_heads, d_ff, vocab_size,
//                max_seq_len; f64 layernorm_epsilon; u8 final_norm
//   block_count  u32
//   block        u16 name length, name bytes, u8 ndim, u32 dims[ndim],
//                f32 values[prod(dims)] (row-major)
//   checksum     u64 FNV-1a of every preceding byte
//
// Parameters are stored as float32 and widened to double on load, so a
// save/load round trip is bit-exact for weights already at storage
// precision (see Weights::round_to_storage_precision).

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "steerkit/model.hpp"

namespace steerkit {

std::vector<std::uint8_t> serialize_weights(const Weights& weights);
// Verifies the checksum before parsing; throws ChecksumMismatch,
// ShapeMismatch (naming the block) or FormatError. Never returns a
// partially loaded model.
Weights deserialize_weights(std::span<const std::uint8_t> bytes);

void save_weights(const Weights& weights, const std::filesystem::path& path);
Weights load_weights(const std::filesystem::path& path);

// Hash of the serialized weights; identifies a model in bank files.
std::uint64_t weights_fingerprint(const Weights& weights);

}  // namespace steerkit
