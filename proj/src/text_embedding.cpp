#include "reveal/text_embedding.hpp"

#include <cctype>
#include <cstdint>
#include <fstream>

#include <json.hpp>

#include "reveal/errors.hpp"

namespace reveal {
namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// splitmix64 finalizer
std::uint64_t mix(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

}  // namespace

HashedBagOfWords::HashedBagOfWords(Index dim) : dim_(dim) {
  if (dim < 1) throw ConfigError("toy text embedding needs a positive width");
}

std::vector<std::string> HashedBagOfWords::tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    std::size_t b = 0;
    std::size_t e = current.size();
    while (b < e && std::ispunct(static_cast<unsigned char>(current[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(current[e - 1]))) --e;
    if (e > b) tokens.push_back(current.substr(b, e - b));
    current.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return tokens;
}

std::pair<Index, double> HashedBagOfWords::slot(std::string_view token) const {
  const std::uint64_t h = fnv1a(token);
  const auto bucket = static_cast<Index>(h % static_cast<std::uint64_t>(dim_));
  const double sign = (mix(h) >> 63) != 0 ? -1.0 : 1.0;
  return {bucket, sign};
}

Matrix HashedBagOfWords::embed(const std::vector<std::string>& texts) const {
  Matrix out = Matrix::Zero(static_cast<Index>(texts.size()), dim_);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    for (const auto& token : tokenize(texts[i])) {
      const auto [bucket, sign] = slot(token);
      out(static_cast<Index>(i), bucket) += sign;
    }
    const double norm = out.row(static_cast<Index>(i)).norm();
    if (norm == 0.0) {
      throw BackendError("toy embedding of '" + texts[i] + "' is zero (no tokens or full cancellation)");
    }
    out.row(static_cast<Index>(i)) /= norm;
  }
  return out;
}

EmbeddingTable::EmbeddingTable(std::map<std::string, std::vector<double>> table, Index dim,
                               std::shared_ptr<const TextEmbeddingBackend> fallback)
    : table_(std::move(table)), dim_(dim), fallback_(std::move(fallback)) {
  for (const auto& [text, vec] : table_) {
    if (static_cast<Index>(vec.size()) != dim_) {
      throw ConfigError("embedding for '" + text + "' has width " + std::to_string(vec.size()));
    }
  }
  if (fallback_ && fallback_->dim() != dim_) {
    throw ConfigError("fallback text embedding width differs from the table width");
  }
}

EmbeddingTable EmbeddingTable::load(const std::string& path,
                                    std::shared_ptr<const TextEmbeddingBackend> fallback) {
  std::ifstream in(path);
  if (!in) throw BackendError("cannot open embedding table '" + path + "'");
  std::map<std::string, std::vector<double>> table;
  Index dim = -1;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto row = nlohmann::json::parse(line);
      auto vec = row.at("embedding").get<std::vector<double>>();
      if (dim < 0) dim = static_cast<Index>(vec.size());
      table[row.at("text").get<std::string>()] = std::move(vec);
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (dim <= 0) throw BackendError("embedding table '" + path + "' is empty");
  return EmbeddingTable(std::move(table), dim, std::move(fallback));
}

Matrix EmbeddingTable::embed(const std::vector<std::string>& texts) const {
  Matrix out(static_cast<Index>(texts.size()), dim_);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto it = table_.find(texts[i]);
    if (it != table_.end()) {
      out.row(static_cast<Index>(i)) = Eigen::Map<const RowVector>(it->second.data(), dim_);
    } else if (fallback_) {
      out.row(static_cast<Index>(i)) = fallback_->embed({texts[i]}).row(0);
    } else {
      throw BackendError("no embedding for '" + texts[i] + "'");
    }
  }
  return out;
}

}  // namespace reveal
