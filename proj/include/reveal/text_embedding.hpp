#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "reveal/matrix.hpp"

namespace reveal {

/// Maps text to fixed-width vectors. Implementations are pure functions of
/// the input text and safe to call concurrently.
class TextEmbeddingBackend {
 public:
  virtual ~TextEmbeddingBackend() = default;
  virtual Index dim() const = 0;
  virtual std::string name() const = 0;
  /// One row per text.
  virtual Matrix embed(const std::vector<std::string>& texts) const = 0;
};

/// Lowercased whitespace tokens (leading/trailing punctuation stripped) are
/// hashed into a signed count sketch of width `dim`, then L2-normalized.
/// FNV-1a 64 picks the bucket; an independent mix of the hash picks the sign.
class HashedBagOfWords final : public TextEmbeddingBackend {
 public:
  explicit HashedBagOfWords(Index dim);
  Index dim() const override { return dim_; }
  std::string name() const override { return "toy"; }
  Matrix embed(const std::vector<std::string>& texts) const override;

  /// Tokens after lowercasing and punctuation stripping.
  static std::vector<std::string> tokenize(std::string_view text);
  /// Bucket and sign for one token.
  std::pair<Index, double> slot(std::string_view token) const;

 private:
  Index dim_;
};

/// Precomputed sentence embeddings loaded from a JSON-lines file, one
/// {"text": ..., "embedding": [...]} object per line (for instance exported
/// from a contrastively trained sentence embedder). Unknown texts raise
/// BackendError unless a fallback backend was supplied.
class EmbeddingTable final : public TextEmbeddingBackend {
 public:
  static EmbeddingTable load(const std::string& path,
                             std::shared_ptr<const TextEmbeddingBackend> fallback = nullptr);

  EmbeddingTable(std::map<std::string, std::vector<double>> table, Index dim,
                 std::shared_ptr<const TextEmbeddingBackend> fallback = nullptr);

  Index dim() const override { return dim_; }
  std::string name() const override { return "table"; }
  Matrix embed(const std::vector<std::string>& texts) const override;

 private:
  std::map<std::string, std::vector<double>> table_;
  Index dim_;
  std::shared_ptr<const TextEmbeddingBackend> fallback_;
};

}  // namespace reveal
