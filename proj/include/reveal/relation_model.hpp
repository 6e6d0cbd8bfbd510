#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "reveal/matrix.hpp"

namespace reveal {

/// One (subject, predicate, object) unit. The object is optional; an absent
/// object is written as "Object: none".
///
/// Fields are trimmed on construction. Subject and predicate must be
/// non-empty and no field may contain a comma, since the flat text template
/// uses commas as separators. An object spelled "none" (any case) or left
/// empty is stored as absent.
class RelationTriplet {
 public:
  RelationTriplet(std::string subject, std::string predicate,
                  std::optional<std::string> object = std::nullopt);

  /// Same as the constructor but replaces internal commas with ';' instead
  /// of rejecting them. Used for annotation sources with separate fields.
  static RelationTriplet sanitized(std::string subject, std::string predicate,
                                   std::optional<std::string> object = std::nullopt);

  const std::string& subject() const { return subject_; }
  const std::string& predicate() const { return predicate_; }
  const std::optional<std::string>& object() const { return object_; }

  /// Dedup key: every field lowercased, trimmed, internal whitespace collapsed.
  std::string normalized_key() const;

  friend bool operator==(const RelationTriplet&, const RelationTriplet&) = default;

 private:
  std::string subject_;
  std::string predicate_;
  std::optional<std::string> object_;
};

/// "Subject: <s>, Predicate: <p>, Object: <o or none>"
std::string format_triplet(const RelationTriplet& t);

/// Parses "subject: X, predicate: Y, object: Z" case-insensitively. Leading
/// bullets ("•", "-", "*", "1.") and surrounding whitespace are stripped.
/// A comma-separated piece without a key continues the previous field and is
/// joined with "; ". Throws MalformedLine when subject or predicate is missing.
RelationTriplet parse_triplet_line(std::string_view line);

/// Lowercase, trim, collapse runs of whitespace to one space.
std::string normalize_text(std::string_view text);

/// Unordered set of triplets for one video; storage order carries no meaning.
/// Duplicates under normalized_key() are dropped on insertion.
class RelationSet {
 public:
  RelationSet() = default;
  RelationSet(std::string video_id, const std::vector<RelationTriplet>& triplets);

  /// Returns false if an equivalent triplet is already present.
  bool add(const RelationTriplet& t);

  const std::string& video_id() const { return video_id_; }
  const std::vector<RelationTriplet>& triplets() const { return triplets_; }
  std::size_t size() const { return triplets_.size(); }
  bool empty() const { return triplets_.empty(); }

  friend bool operator==(const RelationSet&, const RelationSet&) = default;

 private:
  std::string video_id_;
  std::vector<RelationTriplet> triplets_;
};

/// Precomputed visual tokens for one clip plus its relations.
/// fast_tokens: one CLS-level row per frame. slow_tokens: patch rows of the
/// selected frames, flattened frame-major.
struct VideoSample {
  std::string video_id;
  Matrix fast_tokens;
  Matrix slow_tokens;
  RelationSet relations;

  /// Throws ShapeError / PreconditionError when rows are empty, widths differ,
  /// entries are non-finite or there are no relations.
  void validate() const;
};

/// Injective relation -> query mapping. Indices are zero-based.
struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (relation_index, query_index), ordered by relation
  std::vector<int> unmatched_queries;      // ascending
  int num_queries = 0;

  /// Query index assigned to relation j, or -1.
  int query_for(int relation_index) const;

  /// True when relation and query indices are distinct and pairs plus
  /// unmatched_queries partition [0, num_queries). Linear in num_queries.
  bool valid(int num_relations) const;
};

}  // namespace reveal
