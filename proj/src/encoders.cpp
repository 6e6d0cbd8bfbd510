#include "reveal/encoders.hpp"

#include <cmath>
#include <map>

#include "reveal/errors.hpp"
#include "reveal/synthetic.hpp"
#include "reveal/tar.hpp"
#include "reveal/tensor_io.hpp"

namespace reveal {
namespace {

std::shared_ptr<const TextEmbeddingBackend> make_backend(const RelationEncoderConfig& config) {
  config.validate();
  switch (config.backend) {
    case TextBackendKind::kToy:
      return std::make_shared<HashedBagOfWords>(config.backend_dim);
    case TextBackendKind::kTable: {
      auto table = EmbeddingTable::load(config.table_path);
      std::shared_ptr<const TextEmbeddingBackend> fallback;
      if (config.table_fallback_to_toy) fallback = std::make_shared<HashedBagOfWords>(table.dim());
      return std::make_shared<EmbeddingTable>(EmbeddingTable::load(config.table_path, fallback));
    }
  }
  throw ConfigError("unknown text backend");
}

nlohmann::json pathway_to_json(const PathwayConfig& c) {
  return {{"input_dim", c.input_dim},           {"hidden", c.hidden},
          {"heads", c.heads},                   {"encoder_layers", c.encoder_layers},
          {"decoder_layers", c.decoder_layers}, {"num_queries", c.num_queries},
          {"output_dim", c.output_dim},         {"ffn_multiplier", c.ffn_multiplier},
          {"positional_encoding", c.positional_encoding}, {"input_norm", c.input_norm},
          {"projection_head", c.projection_head}, {"max_tokens", c.max_tokens}};
}

PathwayConfig pathway_from_json(const nlohmann::json& j) {
  PathwayConfig c;
  c.input_dim = j.at("input_dim").get<Index>();
  c.hidden = j.at("hidden").get<Index>();
  c.heads = j.at("heads").get<int>();
  c.encoder_layers = j.at("encoder_layers").get<int>();
  c.decoder_layers = j.at("decoder_layers").get<int>();
  c.num_queries = j.at("num_queries").get<int>();
  c.output_dim = j.at("output_dim").get<Index>();
  c.ffn_multiplier = j.at("ffn_multiplier").get<int>();
  c.positional_encoding = j.at("positional_encoding").get<bool>();
  c.input_norm = j.value("input_norm", true);
  c.projection_head = j.at("projection_head").get<bool>();
  c.max_tokens = j.value("max_tokens", Index{1024});
  return c;
}

}  // namespace

void PathwayConfig::validate() const {
  if (input_dim < 1 || hidden < 1 || heads < 1 || encoder_layers < 0 || decoder_layers < 1 ||
      num_queries < 1 || output_dim < 1 || ffn_multiplier < 1 || max_tokens < 1) {
    throw ConfigError("pathway sizes must be positive (encoder_layers may be 0)");
  }
  if (hidden % heads != 0) throw ConfigError("hidden width must be divisible by heads");
  if (num_queries > hidden) throw ConfigError("orthogonal query init needs num_queries <= hidden");
  if (!projection_head && hidden != output_dim) {
    throw ConfigError("without a projection head hidden must equal output_dim");
  }
}

void RelationEncoderConfig::validate() const {
  if (output_dim < 1) throw ConfigError("relation output_dim must be positive");
  if (backend == TextBackendKind::kToy && backend_dim < 1) {
    throw ConfigError("toy backend width must be positive");
  }
  if (backend == TextBackendKind::kTable && table_path.empty()) {
    throw ConfigError("table backend needs table_path");
  }
}

void ModelConfig::validate() const {
  fast.validate();
  slow.validate();
  relation.validate();
  if (fast.input_dim != slow.input_dim) throw ConfigError("pathways must share input_dim");
  if (fast.output_dim != relation.output_dim || slow.output_dim != relation.output_dim) {
    throw ConfigError("query and relation embedding widths differ");
  }
  if (!std::isfinite(init_log_logit_scale)) throw ConfigError("init_log_logit_scale must be finite");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"fast", pathway_to_json(fast)},
          {"slow", pathway_to_json(slow)},
          {"relation",
           {{"backend", relation.backend == TextBackendKind::kToy ? "toy" : "table"},
            {"backend_dim", relation.backend_dim},
            {"table_path", relation.table_path},
            {"table_fallback_to_toy", relation.table_fallback_to_toy},
            {"output_dim", relation.output_dim}}},
          {"init_log_logit_scale", init_log_logit_scale},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.fast = pathway_from_json(j.at("fast"));
    c.slow = pathway_from_json(j.at("slow"));
    const auto& r = j.at("relation");
    const auto backend = r.at("backend").get<std::string>();
    if (backend == "toy") c.relation.backend = TextBackendKind::kToy;
    else if (backend == "table") c.relation.backend = TextBackendKind::kTable;
    else throw ConfigError("unknown relation backend '" + backend + "'");
    c.relation.backend_dim = r.at("backend_dim").get<Index>();
    c.relation.table_path = r.value("table_path", std::string());
    c.relation.table_fallback_to_toy = r.value("table_fallback_to_toy", false);
    c.relation.output_dim = r.at("output_dim").get<Index>();
    c.init_log_logit_scale = j.at("init_log_logit_scale").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

PathwayEncoder::PathwayEncoder(const PathwayConfig& config, std::mt19937_64& rng)
    : config_(config) {
  config_.validate();
  input_proj_ = nn::Linear(config_.input_dim, config_.hidden, rng);
  if (config_.input_norm) input_norm_ = nn::LayerNorm(config_.hidden);
  positions_ = nn::sinusoidal_encoding(config_.max_tokens, config_.hidden);
  const Index ffn = config_.hidden * config_.ffn_multiplier;
  for (int i = 0; i < config_.encoder_layers; ++i) {
    encoder_.emplace_back(config_.hidden, config_.heads, ffn, rng);
  }
  query_embed_ = Variable(nn::orthogonal_matrix(config_.num_queries, config_.hidden, rng), true);
  for (int i = 0; i < config_.decoder_layers; ++i) {
    decoder_.emplace_back(config_.hidden, config_.heads, ffn, rng);
  }
  if (config_.projection_head) {
    head_ = nn::FeedForward(config_.hidden, ffn, config_.output_dim, rng);
  }
}

QuerySet PathwayEncoder::encode(const Variable& tokens) const {
  if (tokens.rows() < 1) throw PreconditionError("pathway input has no tokens");
  if (tokens.cols() != config_.input_dim) {
    throw ShapeError("pathway expects token width " + std::to_string(config_.input_dim) + ", got " +
                     std::to_string(tokens.cols()));
  }
  if (!tokens.value().allFinite()) throw PreconditionError("pathway input has non-finite tokens");

  Variable x = input_proj_(tokens);
  if (config_.input_norm) x = input_norm_(x);
  if (config_.positional_encoding) {
    const Index n = tokens.rows();
    Matrix pe = n <= positions_.rows() ? Matrix(positions_.topRows(n))
                                       : nn::sinusoidal_encoding(n, config_.hidden);
    x = x + ag::constant(std::move(pe));
  }
  for (const auto& layer : encoder_) x = layer(x);

  Variable q = query_embed_;
  for (const auto& layer : decoder_) q = layer(q, x);
  QuerySet out;
  out.hidden = q;
  out.queries = config_.projection_head ? head_(q) : q;
  return out;
}

void PathwayEncoder::collect(const std::string& prefix, nn::ParameterList& out) const {
  input_proj_.collect(prefix + ".input_proj", out);
  if (config_.input_norm) input_norm_.collect(prefix + ".input_norm", out);
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    encoder_[i].collect(prefix + ".encoder." + std::to_string(i), out);
  }
  out.push_back({prefix + ".queries", query_embed_, nn::ParamKind::kEmbedding});
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    decoder_[i].collect(prefix + ".decoder." + std::to_string(i), out);
  }
  if (config_.projection_head) head_.collect(prefix + ".head", out);
}

RelationEncoder::RelationEncoder(const RelationEncoderConfig& config, std::mt19937_64& rng)
    : RelationEncoder(config, make_backend(config), rng) {}

RelationEncoder::RelationEncoder(const RelationEncoderConfig& config,
                                 std::shared_ptr<const TextEmbeddingBackend> backend,
                                 std::mt19937_64& rng)
    : config_(config), backend_(std::move(backend)) {
  config_.validate();
  if (!backend_) throw BackendError("relation encoder has no text backend");
  adapter_ = nn::Linear(backend_->dim(), config_.output_dim, rng);
}

Matrix RelationEncoder::embed_texts(const std::vector<RelationTriplet>& triplets) const {
  std::vector<std::string> texts;
  texts.reserve(triplets.size());
  for (const auto& t : triplets) texts.push_back(format_triplet(t));
  return backend_->embed(texts);
}

Variable RelationEncoder::encode(const std::vector<RelationTriplet>& triplets) const {
  if (triplets.empty()) throw PreconditionError("encode_relations needs at least one triplet");
  return adapter_(ag::constant(embed_texts(triplets)));
}

void RelationEncoder::set_trainable(bool trainable) {
  adapter_.weight.set_requires_grad(trainable);
  adapter_.bias.set_requires_grad(trainable);
}

void RelationEncoder::collect(const std::string& prefix, nn::ParameterList& out) const {
  adapter_.collect(prefix + ".adapter", out);
}

namespace {

// Independent initialization stream per component.
std::mt19937_64 component_rng(std::uint64_t seed, std::uint64_t component) {
  std::seed_seq seq{seed, component};
  return std::mt19937_64(seq);
}

PathwayEncoder build_pathway(const ModelConfig& config, bool fast) {
  config.validate();
  auto rng = component_rng(config.seed, fast ? 1 : 2);
  return PathwayEncoder(fast ? config.fast : config.slow, rng);
}

RelationEncoder build_relation(const ModelConfig& config,
                               std::shared_ptr<const TextEmbeddingBackend> backend) {
  auto rng = component_rng(config.seed, 3);
  return RelationEncoder(config.relation, std::move(backend), rng);
}

}  // namespace

DualPathwayModel::DualPathwayModel(const ModelConfig& config)
    : DualPathwayModel(config, make_backend(config.relation)) {}

DualPathwayModel::DualPathwayModel(const ModelConfig& config,
                                   std::shared_ptr<const TextEmbeddingBackend> backend)
    : config_(config),
      fast_(build_pathway(config, true)),
      slow_(build_pathway(config, false)),
      relation_(build_relation(config, std::move(backend))),
      log_logit_scale_(Matrix::Constant(1, 1, config.init_log_logit_scale), true) {}

ForwardOutput DualPathwayModel::forward(const VideoSample& sample, std::mt19937_64& rng,
                                        std::size_t relation_cap) const {
  sample.validate();
  ForwardOutput out;
  out.fast = fast_.encode(sample.fast_tokens);
  out.slow = slow_.encode(sample.slow_tokens);
  out.used_relations = sample_relations(sample.relations, relation_cap, rng);
  out.relations = relation_.encode(out.used_relations.triplets());
  return out;
}

nn::ParameterList DualPathwayModel::parameters() const {
  nn::ParameterList out;
  fast_.collect("fast", out);
  slow_.collect("slow", out);
  relation_.collect("relation", out);
  out.push_back({"log_logit_scale", log_logit_scale_, nn::ParamKind::kScale});
  return out;
}

std::size_t DualPathwayModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += static_cast<std::size_t>(p.variable.value().size());
  return n;
}

void save_checkpoint(const DualPathwayModel& model, const std::filesystem::path& path,
                     const nlohmann::json& metadata) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto params = model.parameters();
  nlohmann::json names = nlohmann::json::array();
  for (const auto& p : params) names.push_back(p.name);
  nlohmann::json manifest = {{"schema", kCheckpointSchema},
                             {"version", kCheckpointVersion},
                             {"tensors", names},
                             {"relation_trainable", model.relation_encoder().trainable()},
                             {"metadata", metadata}};
  TarWriter writer(path);
  writer.add("manifest.json", manifest.dump(2));
  writer.add("config.json", model.config().to_json().dump(2));
  for (const auto& p : params) {
    writer.add(p.name + ".f64", encode_tensor(p.variable.value(), Precision::kFloat64));
  }
  writer.finish();
}

DualPathwayModel load_checkpoint(const std::filesystem::path& path, nlohmann::json* metadata) {
  TarReader reader(path);
  std::map<std::string, std::string> members;
  while (auto entry = reader.next()) members[entry->name] = std::move(entry->data);

  auto member = [&](const std::string& name) -> const std::string& {
    auto it = members.find(name);
    if (it == members.end()) throw IoError("checkpoint '" + path.string() + "' lacks " + name);
    return it->second;
  };
  nlohmann::json manifest;
  ModelConfig config;
  try {
    manifest = nlohmann::json::parse(member("manifest.json"));
    if (manifest.at("schema") != kCheckpointSchema ||
        manifest.at("version").get<int>() != kCheckpointVersion) {
      throw IoError("checkpoint '" + path.string() + "' has an unsupported schema");
    }
    config = ModelConfig::from_json(nlohmann::json::parse(member("config.json")));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint '" + path.string() + "': " + e.what());
  }

  DualPathwayModel model(config);
  for (auto& p : model.parameters()) {
    Matrix value;
    try {
      value = decode_tensor(member(p.name + ".f64"), Precision::kFloat64);
    } catch (const CorruptSample& e) {
      throw IoError("checkpoint tensor " + p.name + ": " + e.what());
    }
    if (value.rows() != p.variable.rows() || value.cols() != p.variable.cols()) {
      throw IoError("checkpoint tensor " + p.name + " has the wrong shape");
    }
    p.variable.mutable_value() = std::move(value);
  }
  model.relation_encoder().set_trainable(manifest.value("relation_trainable", true));
  if (metadata != nullptr) *metadata = manifest.value("metadata", nlohmann::json::object());
  return model;
}

}  // namespace reveal
