#include "reveal/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <limits>

#include "reveal/errors.hpp"

namespace reveal {

static_assert(std::endian::native == std::endian::little,
              "tensor blobs are written with native little-endian stores");

namespace {

constexpr std::size_t kHeaderBytes = 8;

template <typename T>
void append_pod(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T read_pod(std::string_view bytes, std::size_t offset) {
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  return value;
}

}  // namespace

std::string encode_tensor(const Matrix& m, Precision precision) {
  constexpr auto kMax = std::numeric_limits<std::uint16_t>::max();
  if (m.rows() > kMax || m.cols() > kMax) {
    throw ShapeError("tensor dimension exceeds 65535");
  }
  std::string out;
  const std::size_t elem = precision == Precision::kFloat32 ? 4 : 8;
  out.reserve(kHeaderBytes + elem * static_cast<std::size_t>(m.size()));
  append_pod<std::uint16_t>(out, 2);
  append_pod<std::uint16_t>(out, static_cast<std::uint16_t>(m.rows()));
  append_pod<std::uint16_t>(out, static_cast<std::uint16_t>(m.cols()));
  append_pod<std::uint16_t>(out, 0);
  for (Index i = 0; i < m.size(); ++i) {
    if (precision == Precision::kFloat32) {
      append_pod<float>(out, static_cast<float>(m.data()[i]));
    } else {
      append_pod<double>(out, m.data()[i]);
    }
  }
  return out;
}

Matrix decode_tensor(std::string_view bytes, Precision precision) {
  if (bytes.size() < kHeaderBytes) throw CorruptSample("tensor blob shorter than its header");
  const auto rank = read_pod<std::uint16_t>(bytes, 0);
  if (rank < 1 || rank > 3) throw CorruptSample("tensor rank " + std::to_string(rank));
  std::uint16_t dims[3];
  for (int i = 0; i < 3; ++i) dims[i] = read_pod<std::uint16_t>(bytes, 2 + 2 * i);
  for (int i = rank; i < 3; ++i) {
    if (dims[i] != 0) throw CorruptSample("nonzero unused tensor dimension");
  }
  // Higher-rank tensors collapse leading dimensions into rows.
  Index rows = 1;
  for (int i = 0; i + 1 < rank; ++i) rows *= dims[i];
  const Index cols = dims[rank - 1];
  const std::size_t elem = precision == Precision::kFloat32 ? 4 : 8;
  const std::size_t expected = kHeaderBytes + elem * static_cast<std::size_t>(rows * cols);
  if (bytes.size() != expected) {
    throw CorruptSample("tensor payload is " + std::to_string(bytes.size()) + " bytes, expected " +
                        std::to_string(expected));
  }
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) {
    const std::size_t off = kHeaderBytes + elem * static_cast<std::size_t>(i);
    m.data()[i] = precision == Precision::kFloat32 ? static_cast<double>(read_pod<float>(bytes, off))
                                                   : read_pod<double>(bytes, off);
  }
  return m;
}

}  // namespace reveal
