#pragma once

// POSIX ustar archives: just enough to write and stream regular files.
// Member mtimes, uids and gids are zeroed so archives are byte-reproducible.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>

namespace reveal {

struct TarEntry {
  std::string name;
  std::string data;
};

// Writes to "<path>.tmp" and renames onto `path` in finish(). An unfinished
// writer removes its temporary file on destruction.
class TarWriter {
 public:
  explicit TarWriter(std::filesystem::path path);
  ~TarWriter();
  TarWriter(const TarWriter&) = delete;
  TarWriter& operator=(const TarWriter&) = delete;

  void add(std::string_view name, std::string_view data);
  void finish();

 private:
  std::filesystem::path path_;
  std::filesystem::path tmp_path_;
  std::ofstream out_;
  bool finished_ = false;
};

class TarReader {
 public:
  explicit TarReader(const std::filesystem::path& path);

  // Next regular-file member; nullopt at end of archive. Throws IoError on a
  // truncated archive or a header checksum mismatch.
  std::optional<TarEntry> next();

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  bool done_ = false;
};

}  // namespace reveal
