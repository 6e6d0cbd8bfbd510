#include "reveal/relation_model.hpp"

#include <algorithm>
#include <cctype>

#include "reveal/errors.hpp"

namespace reveal {
namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view trim_view(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::string trim(std::string_view s) { return std::string(trim_view(s)); }

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

void check_field(const std::string& value, const char* name) {
  if (value.find(',') != std::string::npos) {
    throw PreconditionError(std::string("triplet ") + name + " contains a comma: '" + value + "'");
  }
}

std::string replace_commas(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  return s;
}

// Strips "• ", "- ", "* ", "12. ", "3) " style prefixes.
std::string_view strip_bullet(std::string_view s) {
  static constexpr std::string_view kBullet = "\xE2\x80\xA2";
  for (;;) {
    s = trim_view(s);
    if (s.starts_with(kBullet)) {
      s.remove_prefix(kBullet.size());
    } else if (!s.empty() && (s.front() == '-' || s.front() == '*')) {
      s.remove_prefix(1);
    } else {
      std::size_t digits = 0;
      while (digits < s.size() && std::isdigit(static_cast<unsigned char>(s[digits]))) ++digits;
      if (digits > 0 && digits < s.size() && (s[digits] == '.' || s[digits] == ')')) {
        s.remove_prefix(digits + 1);
      } else {
        return s;
      }
    }
  }
}

}  // namespace

RelationTriplet::RelationTriplet(std::string subject, std::string predicate,
                                 std::optional<std::string> object)
    : subject_(trim(subject)), predicate_(trim(predicate)) {
  if (subject_.empty()) throw PreconditionError("triplet subject is empty");
  if (predicate_.empty()) throw PreconditionError("triplet predicate is empty");
  check_field(subject_, "subject");
  check_field(predicate_, "predicate");
  if (object) {
    std::string o = trim(*object);
    if (!o.empty() && lower(o) != "none") {
      check_field(o, "object");
      object_ = std::move(o);
    }
  }
}

RelationTriplet RelationTriplet::sanitized(std::string subject, std::string predicate,
                                           std::optional<std::string> object) {
  if (object) object = replace_commas(std::move(*object));
  return RelationTriplet(replace_commas(std::move(subject)), replace_commas(std::move(predicate)),
                         std::move(object));
}

std::string RelationTriplet::normalized_key() const {
  std::string key = normalize_text(subject_);
  key += '\x1f';
  key += normalize_text(predicate_);
  key += '\x1f';
  key += object_ ? normalize_text(*object_) : std::string("none");
  return key;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : trim_view(text)) {
    if (is_space(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

std::string format_triplet(const RelationTriplet& t) {
  std::string out = "Subject: ";
  out += t.subject();
  out += ", Predicate: ";
  out += t.predicate();
  out += ", Object: ";
  out += t.object() ? *t.object() : std::string("none");
  return out;
}

RelationTriplet parse_triplet_line(std::string_view line) {
  std::string_view body = strip_bullet(line);
  std::optional<std::string> subject, predicate, object;
  std::optional<std::string>* last = nullptr;

  std::size_t pos = 0;
  while (pos <= body.size()) {
    std::size_t comma = body.find(',', pos);
    if (comma == std::string_view::npos) comma = body.size();
    std::string_view piece = trim_view(body.substr(pos, comma - pos));
    pos = comma + 1;
    if (piece.empty()) continue;

    std::size_t colon = piece.find(':');
    std::optional<std::string>* target = nullptr;
    if (colon != std::string_view::npos) {
      std::string key = lower(trim_view(piece.substr(0, colon)));
      if (key == "subject") target = &subject;
      else if (key == "predicate") target = &predicate;
      else if (key == "object") target = &object;
    }
    if (target != nullptr) {
      if (target->has_value()) {
        throw MalformedLine("duplicate key in line: '" + std::string(line) + "'");
      }
      *target = trim(piece.substr(colon + 1));
      last = target;
    } else if (last != nullptr) {
      **last += "; ";
      **last += std::string(piece);
    } else {
      throw MalformedLine("unrecognized text before first key: '" + std::string(line) + "'");
    }
  }

  if (!subject || subject->empty()) {
    throw MalformedLine("missing subject: '" + std::string(line) + "'");
  }
  if (!predicate || predicate->empty()) {
    throw MalformedLine("missing predicate: '" + std::string(line) + "'");
  }
  return RelationTriplet(std::move(*subject), std::move(*predicate), std::move(object));
}

RelationSet::RelationSet(std::string video_id, const std::vector<RelationTriplet>& triplets)
    : video_id_(std::move(video_id)) {
  for (const auto& t : triplets) add(t);
}

bool RelationSet::add(const RelationTriplet& t) {
  const std::string key = t.normalized_key();
  for (const auto& existing : triplets_) {
    if (existing.normalized_key() == key) return false;
  }
  triplets_.push_back(t);
  return true;
}

void VideoSample::validate() const {
  if (fast_tokens.rows() < 1 || slow_tokens.rows() < 1) {
    throw ShapeError("sample '" + video_id + "' has an empty token stream");
  }
  if (fast_tokens.cols() != slow_tokens.cols()) {
    throw ShapeError("sample '" + video_id + "' has mismatched token widths");
  }
  if (!fast_tokens.allFinite() || !slow_tokens.allFinite()) {
    throw PreconditionError("sample '" + video_id + "' has non-finite tokens");
  }
  if (relations.empty()) {
    throw PreconditionError("sample '" + video_id + "' has no relations");
  }
}

int Assignment::query_for(int relation_index) const {
  for (const auto& [j, m] : pairs) {
    if (j == relation_index) return m;
  }
  return -1;
}

bool Assignment::valid(int num_relations) const {
  if (num_queries < 0 || static_cast<int>(pairs.size()) != num_relations) return false;
  std::vector<char> relation_seen(static_cast<std::size_t>(num_relations), 0);
  std::vector<char> query_seen(static_cast<std::size_t>(num_queries), 0);
  for (const auto& [j, m] : pairs) {
    if (j < 0 || j >= num_relations || m < 0 || m >= num_queries) return false;
    if (relation_seen[j] || query_seen[m]) return false;
    relation_seen[j] = query_seen[m] = 1;
  }
  for (int m : unmatched_queries) {
    if (m < 0 || m >= num_queries || query_seen[m]) return false;
    query_seen[m] = 1;
  }
  return std::all_of(query_seen.begin(), query_seen.end(), [](char c) { return c != 0; });
}

}  // namespace reveal
