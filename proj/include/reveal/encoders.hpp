#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "reveal/autograd.hpp"
#include "reveal/nn.hpp"
#include "reveal/relation_model.hpp"
#include "reveal/text_embedding.hpp"

namespace reveal {

using ag::Variable;

struct PathwayConfig {
  Index input_dim = 1024;
  Index hidden = 768;
  int heads = 8;
  int encoder_layers = 2;
  int decoder_layers = 12;
  int num_queries = 8;
  Index output_dim = 1024;
  int ffn_multiplier = 4;
  bool positional_encoding = true;
  // LayerNorm on the projected tokens, so content and the unit-scale
  // positional code enter the encoder at comparable magnitudes.
  bool input_norm = true;
  // Without the head the decoder states are the queries; needs hidden == output_dim.
  bool projection_head = true;
  // Rows of the precomputed sinusoidal table; longer inputs compute it on the fly.
  Index max_tokens = 1024;

  void validate() const;
};

enum class TextBackendKind { kToy, kTable };

struct RelationEncoderConfig {
  TextBackendKind backend = TextBackendKind::kToy;
  Index backend_dim = 1024;  // toy sketch width; ignored for tables
  std::string table_path;
  bool table_fallback_to_toy = false;
  Index output_dim = 1024;

  void validate() const;
};

struct ModelConfig {
  PathwayConfig fast;
  PathwayConfig slow;
  RelationEncoderConfig relation;
  // Initial log of the logit scale 1/tau.
  double init_log_logit_scale = 2.6592600369327779;  // log(1 / 0.07)
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Query-set output of one pathway.
struct QuerySet {
  Variable hidden;   // decoder states before the projection head, [M x hidden]
  Variable queries;  // [M x output_dim]
};

/// Input projection + sinusoidal positions + self-attention encoder, then a
/// query decoder cross-attending to the encoded tokens, then the H -> 4H ->
/// D_rel projection head. Emits num_queries rows for any token count.
class PathwayEncoder {
 public:
  PathwayEncoder(const PathwayConfig& config, std::mt19937_64& rng);

  /// tokens: [N x input_dim], N >= 1. Throws ShapeError on a width mismatch
  /// and PreconditionError on non-finite input.
  QuerySet encode(const Variable& tokens) const;
  QuerySet encode(const Matrix& tokens) const { return encode(ag::constant(tokens)); }

  const PathwayConfig& config() const { return config_; }
  void collect(const std::string& prefix, nn::ParameterList& out) const;

 private:
  PathwayConfig config_;
  nn::Linear input_proj_;
  nn::LayerNorm input_norm_;
  Matrix positions_;
  std::vector<nn::EncoderLayer> encoder_;
  Variable query_embed_;
  std::vector<nn::DecoderLayer> decoder_;
  nn::FeedForward head_;
};

/// Text backend followed by a one-layer linear adapter to output_dim.
class RelationEncoder {
 public:
  RelationEncoder(const RelationEncoderConfig& config, std::mt19937_64& rng);
  RelationEncoder(const RelationEncoderConfig& config,
                  std::shared_ptr<const TextEmbeddingBackend> backend, std::mt19937_64& rng);

  /// Backend output for format_triplet of each triplet, [J x backend dim].
  Matrix embed_texts(const std::vector<RelationTriplet>& triplets) const;
  /// Adapted embeddings, [J x output_dim]. Throws PreconditionError when empty.
  Variable encode(const std::vector<RelationTriplet>& triplets) const;

  /// Frozen adapters receive no gradient.
  void set_trainable(bool trainable);
  bool trainable() const { return adapter_.weight.requires_grad(); }

  const TextEmbeddingBackend& backend() const { return *backend_; }
  void collect(const std::string& prefix, nn::ParameterList& out) const;

 private:
  RelationEncoderConfig config_;
  std::shared_ptr<const TextEmbeddingBackend> backend_;
  nn::Linear adapter_;
};

struct ForwardOutput {
  QuerySet fast;
  QuerySet slow;
  Variable relations;  // [J x D_rel] after the relation cap
  RelationSet used_relations;
};

/// Two independent pathways (no shared parameters), the relation encoder and
/// the learnable log logit scale.
class DualPathwayModel {
 public:
  explicit DualPathwayModel(const ModelConfig& config);
  DualPathwayModel(const ModelConfig& config, std::shared_ptr<const TextEmbeddingBackend> backend);

  /// Caps the relations with sample_relations(cap, rng) before encoding.
  ForwardOutput forward(const VideoSample& sample, std::mt19937_64& rng,
                        std::size_t relation_cap = 8) const;

  const PathwayEncoder& fast() const { return fast_; }
  const PathwayEncoder& slow() const { return slow_; }
  const RelationEncoder& relation_encoder() const { return relation_; }
  RelationEncoder& relation_encoder() { return relation_; }
  const Variable& log_logit_scale() const { return log_logit_scale_; }
  Variable& log_logit_scale() { return log_logit_scale_; }
  const ModelConfig& config() const { return config_; }

  nn::ParameterList parameters() const;
  std::size_t parameter_count() const;

 private:
  ModelConfig config_;
  PathwayEncoder fast_;
  PathwayEncoder slow_;
  RelationEncoder relation_;
  Variable log_logit_scale_;
};

/// Archive of "config.json", "manifest.json" and one "<name>.f64" tensor per
/// parameter, written atomically. `metadata` lands in the manifest.
void save_checkpoint(const DualPathwayModel& model, const std::filesystem::path& path,
                     const nlohmann::json& metadata = nlohmann::json::object());

/// Rebuilds the model from the stored config and overwrites every
/// parameter. Throws IoError on a missing or mismatched tensor.
DualPathwayModel load_checkpoint(const std::filesystem::path& path,
                                 nlohmann::json* metadata = nullptr);

inline constexpr const char* kCheckpointSchema = "reveal-checkpoint";
inline constexpr int kCheckpointVersion = 1;

}  // namespace reveal
