#pragma once

// Binary tensor blobs used inside shards and checkpoints.
//
//   bytes 0-1   uint16 rank (1..3)
//   bytes 2-7   uint16 dims[3], unused trailing dims are 0
//   bytes 8-    payload, row-major, little-endian
//
// Shards store float32 payloads (".f32" members), checkpoints float64
// (".f64" members). All integers are little-endian.

#include <string>
#include <string_view>

#include "reveal/matrix.hpp"

namespace reveal {

enum class Precision { kFloat32, kFloat64 };

std::string encode_tensor(const Matrix& m, Precision precision);

// Rank-1 tensors decode to a single row. Throws CorruptSample on a bad
// header or a payload size that does not match the header.
Matrix decode_tensor(std::string_view bytes, Precision precision);

}  // namespace reveal
