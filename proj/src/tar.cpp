#include "reveal/tar.hpp"

#include <algorithm>
#include <array>
#include <cstring>

#include "reveal/errors.hpp"

namespace reveal {
namespace {

constexpr std::size_t kBlock = 512;
using Block = std::array<char, kBlock>;

void put_octal(char* field, std::size_t width, std::uint64_t value) {
  // width - 1 digits followed by NUL.
  std::memset(field, '0', width - 1);
  field[width - 1] = '\0';
  for (std::size_t i = width - 1; i-- > 0 && value > 0;) {
    field[i] = static_cast<char>('0' + (value & 7U));
    value >>= 3;
  }
}

std::uint64_t parse_octal(const char* field, std::size_t width) {
  std::uint64_t value = 0;
  for (std::size_t i = 0; i < width; ++i) {
    const char c = field[i];
    if (c == '\0' || c == ' ') {
      if (value != 0) break;
      continue;
    }
    if (c < '0' || c > '7') throw IoError("tar: bad octal field");
    value = (value << 3) | static_cast<std::uint64_t>(c - '0');
  }
  return value;
}

unsigned checksum(const Block& header) {
  unsigned sum = 0;
  for (std::size_t i = 0; i < kBlock; ++i) {
    const bool in_chksum_field = i >= 148 && i < 156;
    sum += in_chksum_field ? static_cast<unsigned>(' ') : static_cast<unsigned char>(header[i]);
  }
  return sum;
}

}  // namespace

TarWriter::TarWriter(std::filesystem::path path)
    : path_(std::move(path)), tmp_path_(path_.string() + ".tmp") {
  out_.open(tmp_path_, std::ios::binary | std::ios::trunc);
  if (!out_) throw IoError("cannot open '" + tmp_path_.string() + "' for writing");
}

TarWriter::~TarWriter() {
  if (!finished_) {
    out_.close();
    std::error_code ec;
    std::filesystem::remove(tmp_path_, ec);
  }
}

void TarWriter::add(std::string_view name, std::string_view data) {
  if (name.empty() || name.size() >= 100) {
    throw IoError("tar member name must be 1..99 bytes: '" + std::string(name) + "'");
  }
  Block header{};
  std::memcpy(header.data(), name.data(), name.size());
  put_octal(header.data() + 100, 8, 0644);
  put_octal(header.data() + 108, 8, 0);
  put_octal(header.data() + 116, 8, 0);
  put_octal(header.data() + 124, 12, data.size());
  put_octal(header.data() + 136, 12, 0);
  header[156] = '0';
  std::memcpy(header.data() + 257, "ustar", 6);
  std::memcpy(header.data() + 263, "00", 2);
  const unsigned sum = checksum(header);
  put_octal(header.data() + 148, 7, sum);
  header[155] = ' ';

  out_.write(header.data(), kBlock);
  out_.write(data.data(), static_cast<std::streamsize>(data.size()));
  const std::size_t pad = (kBlock - data.size() % kBlock) % kBlock;
  static const Block zeros{};
  out_.write(zeros.data(), static_cast<std::streamsize>(pad));
  if (!out_) throw IoError("write failed on '" + tmp_path_.string() + "'");
}

void TarWriter::finish() {
  if (finished_) return;
  static const Block zeros{};
  out_.write(zeros.data(), kBlock);
  out_.write(zeros.data(), kBlock);
  out_.close();
  if (!out_) throw IoError("write failed on '" + tmp_path_.string() + "'");
  std::error_code ec;
  std::filesystem::rename(tmp_path_, path_, ec);
  if (ec) throw IoError("cannot rename onto '" + path_.string() + "': " + ec.message());
  finished_ = true;
}

TarReader::TarReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw IoError("cannot open '" + path.string() + "'");
}

std::optional<TarEntry> TarReader::next() {
  while (!done_) {
    Block header{};
    in_.read(header.data(), kBlock);
    if (in_.gcount() == 0) {
      done_ = true;
      break;
    }
    if (static_cast<std::size_t>(in_.gcount()) != kBlock) {
      throw IoError("truncated tar header in '" + path_.string() + "'");
    }
    if (std::all_of(header.begin(), header.end(), [](char c) { return c == '\0'; })) {
      done_ = true;
      break;
    }
    if (parse_octal(header.data() + 148, 8) != checksum(header)) {
      throw IoError("tar header checksum mismatch in '" + path_.string() + "'");
    }
    const std::uint64_t size = parse_octal(header.data() + 124, 12);
    const char type = header[156];
    std::string name(header.data(), strnlen(header.data(), 100));
    const std::string prefix(header.data() + 345, strnlen(header.data() + 345, 155));
    if (!prefix.empty()) name = prefix + "/" + name;

    std::string data(size, '\0');
    in_.read(data.data(), static_cast<std::streamsize>(size));
    if (static_cast<std::uint64_t>(in_.gcount()) != size) {
      throw IoError("truncated tar member '" + name + "' in '" + path_.string() + "'");
    }
    const std::uint64_t pad = (kBlock - size % kBlock) % kBlock;
    in_.ignore(static_cast<std::streamsize>(pad));

    if (type == '0' || type == '\0') return TarEntry{std::move(name), std::move(data)};
  }
  return std::nullopt;
}

}  // namespace reveal
