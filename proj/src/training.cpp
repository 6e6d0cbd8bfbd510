#include "reveal/training.hpp"

#include <algorithm>
#include <charconv>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include <spdlog/spdlog.h>

#include "reveal/errors.hpp"

namespace reveal {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw ConfigError("bad value '" + text + "' for " + key);
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("bad boolean '" + text + "' for " + key);
}

}  // namespace

void TrainConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(base_lr, "base_lr");
  positive(final_lr_fraction, "final_lr_fraction");
  positive(grad_clip_norm, "grad_clip_norm");
  positive(adam_eps, "adam_eps");
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) {
    throw ConfigError("warmup_fraction must lie in (0, 1)");
  }
  if (final_lr_fraction > 1.0) throw ConfigError("final_lr_fraction must be at most 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (epochs < 1 || grad_accum_steps < 1 || relation_cap < 1 || log_every < 1) {
    throw ConfigError("epochs, grad_accum_steps, relation_cap and log_every must be positive");
  }
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2 for in-batch negatives");
  if (max_steps < 0 || checkpoint_every < 0) {
    throw ConfigError("max_steps and checkpoint_every must be non-negative");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (shuffle_buffer < 1) throw ConfigError("shuffle_buffer must be positive");
}

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k = {
      "base_lr",          "warmup_fraction",       "final_lr_fraction",
      "epochs",           "grad_accum_steps",      "grad_clip_norm",
      "weight_decay",     "seed",                  "relation_cap",
      "pathway_mode",     "relation_encoder_mode", "loss",
      "reduction",        "include_unmatched_queries", "batch_size",
      "max_steps",        "adam_beta1",            "adam_beta2",
      "adam_eps",         "clamp_logit_scale",     "shuffle_buffer",
      "shuffle_initial",  "log_every",             "checkpoint_every",
      "checkpoint_dir"};
  return k;
}

void TrainConfig::set(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  if (key == "base_lr") base_lr = parse_number<double>(key, value);
  else if (key == "warmup_fraction") warmup_fraction = parse_number<double>(key, value);
  else if (key == "final_lr_fraction") final_lr_fraction = parse_number<double>(key, value);
  else if (key == "epochs") epochs = parse_number<int>(key, value);
  else if (key == "grad_accum_steps") grad_accum_steps = parse_number<int>(key, value);
  else if (key == "grad_clip_norm") grad_clip_norm = parse_number<double>(key, value);
  else if (key == "weight_decay") weight_decay = parse_number<double>(key, value);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else if (key == "relation_cap") relation_cap = parse_number<int>(key, value);
  else if (key == "pathway_mode") {
    if (value == "per-pathway") pathway_mode = PathwayMode::kPerPathway;
    else if (value == "pooled") pathway_mode = PathwayMode::kPooled;
    else throw ConfigError("pathway_mode must be per-pathway or pooled");
  } else if (key == "relation_encoder_mode") {
    if (value == "trainable") relation_encoder_mode = RelationEncoderMode::kTrainable;
    else if (value == "frozen") relation_encoder_mode = RelationEncoderMode::kFrozen;
    else throw ConfigError("relation_encoder_mode must be trainable or frozen");
  } else if (key == "loss") {
    if (value == "mm-nce") loss = LossKind::kMmNce;
    else if (value == "matched-mse") loss = LossKind::kMatchedMse;
    else throw ConfigError("loss must be mm-nce or matched-mse");
  } else if (key == "reduction") {
    if (value == "mean") reduction = Reduction::kMean;
    else if (value == "sum") reduction = Reduction::kSum;
    else throw ConfigError("reduction must be mean or sum");
  } else if (key == "include_unmatched_queries") include_unmatched_queries = parse_bool(key, value);
  else if (key == "batch_size") batch_size = parse_number<int>(key, value);
  else if (key == "max_steps") max_steps = parse_number<int>(key, value);
  else if (key == "adam_beta1") adam_beta1 = parse_number<double>(key, value);
  else if (key == "adam_beta2") adam_beta2 = parse_number<double>(key, value);
  else if (key == "adam_eps") adam_eps = parse_number<double>(key, value);
  else if (key == "clamp_logit_scale") clamp_logit_scale = parse_bool(key, value);
  else if (key == "shuffle_buffer") shuffle_buffer = parse_number<std::size_t>(key, value);
  else if (key == "shuffle_initial") shuffle_initial = parse_number<std::size_t>(key, value);
  else if (key == "log_every") log_every = parse_number<int>(key, value);
  else if (key == "checkpoint_every") checkpoint_every = parse_number<int>(key, value);
  else if (key == "checkpoint_dir") checkpoint_dir = value;
  else throw ConfigError("unknown training key '" + key + "'");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"base_lr", base_lr},
          {"warmup_fraction", warmup_fraction},
          {"final_lr_fraction", final_lr_fraction},
          {"epochs", epochs},
          {"grad_accum_steps", grad_accum_steps},
          {"grad_clip_norm", grad_clip_norm},
          {"weight_decay", weight_decay},
          {"seed", seed},
          {"relation_cap", relation_cap},
          {"pathway_mode", pathway_mode == PathwayMode::kPerPathway ? "per-pathway" : "pooled"},
          {"relation_encoder_mode",
           relation_encoder_mode == RelationEncoderMode::kTrainable ? "trainable" : "frozen"},
          {"loss", loss == LossKind::kMmNce ? "mm-nce" : "matched-mse"},
          {"reduction", reduction == Reduction::kMean ? "mean" : "sum"},
          {"include_unmatched_queries", include_unmatched_queries},
          {"batch_size", batch_size},
          {"max_steps", max_steps},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"adam_eps", adam_eps},
          {"clamp_logit_scale", clamp_logit_scale},
          {"shuffle_buffer", shuffle_buffer},
          {"shuffle_initial", shuffle_initial},
          {"log_every", log_every},
          {"checkpoint_every", checkpoint_every},
          {"checkpoint_dir", checkpoint_dir}};
}

namespace {

const std::vector<std::string> kPathwayKeys = {
    "input_dim",      "hidden",      "heads",          "encoder_layers",
    "decoder_layers", "num_queries", "ffn_multiplier", "positional_encoding",
    "input_norm",     "projection_head", "max_tokens"};

void set_pathway_option(PathwayConfig& p, const std::string& key, const std::string& value) {
  if (key == "input_dim") p.input_dim = parse_number<Index>(key, value);
  else if (key == "hidden") p.hidden = parse_number<Index>(key, value);
  else if (key == "heads") p.heads = parse_number<int>(key, value);
  else if (key == "encoder_layers") p.encoder_layers = parse_number<int>(key, value);
  else if (key == "decoder_layers") p.decoder_layers = parse_number<int>(key, value);
  else if (key == "num_queries") p.num_queries = parse_number<int>(key, value);
  else if (key == "ffn_multiplier") p.ffn_multiplier = parse_number<int>(key, value);
  else if (key == "positional_encoding") p.positional_encoding = parse_bool(key, value);
  else if (key == "input_norm") p.input_norm = parse_bool(key, value);
  else if (key == "projection_head") p.projection_head = parse_bool(key, value);
  else if (key == "max_tokens") p.max_tokens = parse_number<Index>(key, value);
  else throw ConfigError("unknown model key '" + key + "'");
}

}  // namespace

const std::vector<std::string>& model_option_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k = kPathwayKeys;
    for (const char* prefix : {"fast.", "slow."}) {
      for (const auto& p : kPathwayKeys) k.push_back(prefix + p);
    }
    for (const char* r : {"output_dim", "backend", "backend_dim", "table_path",
                          "table_fallback_to_toy", "model_seed", "init_log_logit_scale"}) {
      k.emplace_back(r);
    }
    return k;
  }();
  return keys;
}

void set_model_option(ModelConfig& c, const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  if (key.starts_with("fast.")) return set_pathway_option(c.fast, key.substr(5), value);
  if (key.starts_with("slow.")) return set_pathway_option(c.slow, key.substr(5), value);
  if (std::find(kPathwayKeys.begin(), kPathwayKeys.end(), key) != kPathwayKeys.end()) {
    set_pathway_option(c.fast, key, value);
    set_pathway_option(c.slow, key, value);
  } else if (key == "output_dim") {
    const auto d = parse_number<Index>(key, value);
    c.fast.output_dim = c.slow.output_dim = c.relation.output_dim = d;
  } else if (key == "backend") {
    if (value == "toy") c.relation.backend = TextBackendKind::kToy;
    else if (value == "table") c.relation.backend = TextBackendKind::kTable;
    else throw ConfigError("backend must be toy or table");
  } else if (key == "backend_dim") {
    c.relation.backend_dim = parse_number<Index>(key, value);
  } else if (key == "table_path") {
    c.relation.table_path = value;
  } else if (key == "table_fallback_to_toy") {
    c.relation.table_fallback_to_toy = parse_bool(key, value);
  } else if (key == "model_seed") {
    c.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "init_log_logit_scale") {
    c.init_log_logit_scale = parse_number<double>(key, value);
  } else {
    throw ConfigError("unknown model key '" + key + "'");
  }
}

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // '#' starts a comment at line start or after whitespace.
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '#' && (i == 0 || std::isspace(static_cast<unsigned char>(line[i - 1])))) {
        line.resize(i);
        break;
      }
    }
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": empty key");
    if (!out.emplace(key, trim(std::string_view(t).substr(eq + 1))).second) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": repeated key " + key);
    }
  }
  return out;
}

double lr_at(long step, long total_steps, const TrainConfig& config) {
  if (total_steps < 1 || step < 0 || step > total_steps) {
    throw PreconditionError("lr_at: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(total_steps) + "]");
  }
  const double warmup = config.warmup_fraction * static_cast<double>(total_steps);
  const double s = static_cast<double>(step);
  if (s < warmup) return config.base_lr * s / warmup;
  if (step == total_steps) return config.final_lr_fraction * config.base_lr;
  const double progress = (s - warmup) / (static_cast<double>(total_steps) - warmup);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  const double floor = config.final_lr_fraction * config.base_lr;
  return floor + (config.base_lr - floor) * cosine;
}

AdamW::AdamW(nn::ParameterList params, double beta1, double beta2, double eps,
             double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
  for (auto& p : params) {
    const auto& v = p.variable.value();
    slots_.push_back({std::move(p), Matrix::Zero(v.rows(), v.cols()), Matrix::Zero(v.rows(), v.cols())});
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& slot : slots_) {
    auto& var = slot.param.variable;
    if (!var.requires_grad()) continue;
    const Matrix& g = var.grad();
    slot.m = beta1_ * slot.m + (1.0 - beta1_) * g;
    slot.v = beta2_ * slot.v + (1.0 - beta2_) * g.cwiseProduct(g);
    Matrix& w = var.mutable_value();
    const auto kind = slot.param.kind;
    if (kind == nn::ParamKind::kWeight || kind == nn::ParamKind::kEmbedding) {
      w *= 1.0 - lr * weight_decay_;
    }
    w.array() -= lr * (slot.m.array() / bc1) / ((slot.v.array() / bc2).sqrt() + eps_);
  }
}

void AdamW::zero_grad() {
  for (auto& slot : slots_) slot.param.variable.zero_grad();
}

double global_grad_norm(const nn::ParameterList& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (p.variable.requires_grad() && p.variable.has_grad()) sq += p.variable.grad().squaredNorm();
  }
  return std::sqrt(sq);
}

double clip_grad_norm(const nn::ParameterList& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const double factor = max_norm / (norm + 1e-12);
    for (const auto& p : params) {
      if (p.variable.requires_grad() && p.variable.has_grad()) {
        Matrix scaled = p.variable.grad() * (factor - 1.0);
        p.variable.accumulate_grad(scaled);
      }
    }
  }
  return norm;
}

void JsonLinesSink::write(const nlohmann::json& record) { out_ << record.dump() << '\n' << std::flush; }

namespace {

class ReaderStream final : public SampleStream {
 public:
  explicit ReaderStream(ShardReader reader) : reader_(std::move(reader)) {}
  std::optional<VideoSample> next() override { return reader_.next(); }

 private:
  ShardReader reader_;
};

class MemoryStream final : public SampleStream {
 public:
  MemoryStream(std::span<const VideoSample> samples, std::vector<std::size_t> order)
      : samples_(samples), order_(std::move(order)) {}
  std::optional<VideoSample> next() override {
    if (pos_ >= order_.size()) return std::nullopt;
    return samples_[order_[pos_++]];
  }

 private:
  std::span<const VideoSample> samples_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

std::size_t count_samples(const std::vector<std::filesystem::path>& shards) {
  std::size_t n = 0;
  for (const auto& path : shards) {
    TarReader reader(path);
    while (auto entry = reader.next()) {
      if (entry->name.ends_with(".json")) ++n;
    }
  }
  return n;
}

}  // namespace

SampleSource shard_source(const std::vector<std::filesystem::path>& shards,
                          const TrainConfig& config) {
  if (shards.empty()) throw PreconditionError("training needs at least one shard");
  SampleSource source;
  source.size = count_samples(shards);
  const ShuffleOptions options{config.shuffle_buffer, config.shuffle_initial};
  const std::uint64_t seed = config.seed;
  source.open = [shards, options, seed](int epoch) -> std::unique_ptr<SampleStream> {
    return std::make_unique<ReaderStream>(
        ShardReader(shards, options, seed + static_cast<std::uint64_t>(epoch)));
  };
  return source;
}

SampleSource memory_source(std::span<const VideoSample> samples, std::uint64_t seed) {
  SampleSource source;
  source.size = samples.size();
  source.open = [samples, seed](int epoch) -> std::unique_ptr<SampleStream> {
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);
    return std::make_unique<MemoryStream>(samples, std::move(order));
  };
  return source;
}

long steps_per_epoch(std::size_t samples, const TrainConfig& config) {
  const auto micro = static_cast<long>(samples) / config.batch_size;
  return micro / config.grad_accum_steps;
}

LossTerms batch_loss(const DualPathwayModel& model, const std::vector<ForwardOutput>& outputs,
                     const TrainConfig& config) {
  std::vector<ag::Variable> fast, slow, pooled, relations;
  for (const auto& o : outputs) {
    fast.push_back(o.fast.queries);
    slow.push_back(o.slow.queries);
    const ag::Variable both[] = {o.fast.queries, o.slow.queries};
    if (config.pathway_mode == PathwayMode::kPooled) pooled.push_back(ag::concat_rows(both));
    relations.push_back(o.relations);
  }
  std::vector<BatchAlignment> groups;
  if (config.pathway_mode == PathwayMode::kPooled) {
    groups.push_back(align_batch(pooled, relations, model.log_logit_scale()));
  } else {
    groups.push_back(align_batch(fast, relations, model.log_logit_scale()));
    groups.push_back(align_batch(slow, relations, model.log_logit_scale()));
  }

  const LossOptions options{config.reduction, config.include_unmatched_queries};
  LossTerms out;
  for (const auto& g : groups) {
    LossTerms t;
    if (config.loss == LossKind::kMmNce) {
      t = mm_nce_terms(g, options);
    } else {
      t.total = matched_mse_loss(g);
      t.q_to_r = ag::constant(Matrix::Zero(1, 1));
      t.r_to_q = ag::constant(Matrix::Zero(1, 1));
    }
    if (!out.total.defined()) {
      out = t;
    } else {
      out.total = out.total + t.total;
      out.q_to_r = out.q_to_r + t.q_to_r;
      out.r_to_q = out.r_to_q + t.r_to_q;
    }
  }
  return out;
}

TrainResult train(DualPathwayModel& model, const SampleSource& source, const TrainConfig& config,
                  MetricsSink& sink) {
  config.validate();
  model.relation_encoder().set_trainable(config.relation_encoder_mode ==
                                         RelationEncoderMode::kTrainable);
  const nn::ParameterList params = model.parameters();
  AdamW optimizer(params, config.adam_beta1, config.adam_beta2, config.adam_eps,
                  config.weight_decay);

  const long per_epoch = steps_per_epoch(source.size, config);
  if (per_epoch < 1) {
    throw PreconditionError("dataset of " + std::to_string(source.size) +
                            " samples is smaller than one optimizer step");
  }
  TrainResult result;
  result.total_steps = per_epoch * config.epochs;
  if (config.max_steps > 0) result.total_steps = std::min<long>(result.total_steps, config.max_steps);

  std::mt19937_64 relation_rng(config.seed ^ 0x5eedf00dULL);
  const double max_log_scale = std::log(100.0);
  const double accum_weight = 1.0 / config.grad_accum_steps;
  long step = 0;

  auto write_checkpoint = [&](const std::string& name, int epoch) {
    const auto path = std::filesystem::path(config.checkpoint_dir) / name;
    save_checkpoint(model, path, {{"step", step}, {"epoch", epoch}, {"train", config.to_json()}});
    spdlog::info("wrote checkpoint {}", path.string());
  };

  for (int epoch = 0; epoch < config.epochs && step < result.total_steps; ++epoch) {
    auto stream = source.open(epoch);
    optimizer.zero_grad();
    bool exhausted = false;
    while (!exhausted && step < result.total_steps) {
      StepMetrics m;
      int micro = 0;
      for (; micro < config.grad_accum_steps; ++micro) {
        std::vector<VideoSample> batch;
        while (static_cast<int>(batch.size()) < config.batch_size) {
          auto s = stream->next();
          if (!s) break;
          batch.push_back(std::move(*s));
        }
        if (static_cast<int>(batch.size()) < config.batch_size) {
          exhausted = true;
          break;
        }
        try {
          std::vector<ForwardOutput> outputs;
          outputs.reserve(batch.size());
          for (const auto& s : batch) {
            outputs.push_back(
                model.forward(s, relation_rng, static_cast<std::size_t>(config.relation_cap)));
          }
          LossTerms terms = batch_loss(model, outputs, config);
          ag::scale(terms.total, accum_weight).backward();
          m.loss += accum_weight * terms.total.scalar();
          m.q_to_r += accum_weight * terms.q_to_r.scalar();
          m.r_to_q += accum_weight * terms.r_to_q.scalar();
        } catch (const DegenerateVector& e) {
          throw DegenerateVector("step " + std::to_string(step) + ", epoch " +
                                 std::to_string(epoch) + ": " + e.what());
        }
      }
      if (micro < config.grad_accum_steps) break;  // partial accumulation dropped

      m.step = step + 1;
      m.epoch = epoch;
      m.lr = lr_at(step + 1, result.total_steps, config);
      m.grad_norm = clip_grad_norm(params, config.grad_clip_norm);
      m.clipped_grad_norm = global_grad_norm(params);
      optimizer.step(m.lr);
      optimizer.zero_grad();
      if (config.clamp_logit_scale) {
        double& ls = model.log_logit_scale().mutable_value()(0, 0);
        ls = std::clamp(ls, 0.0, max_log_scale);
      }
      m.tau = std::exp(-model.log_logit_scale().scalar());
      ++step;
      result.history.push_back(m);

      if (step % config.log_every == 0 || step == result.total_steps) {
        sink.write({{"step", m.step},
                    {"epoch", m.epoch},
                    {"lr", m.lr},
                    {"loss", m.loss},
                    {"loss_q_to_r", m.q_to_r},
                    {"loss_r_to_q", m.r_to_q},
                    {"grad_norm", m.grad_norm},
                    {"clipped_grad_norm", m.clipped_grad_norm},
                    {"tau", m.tau}});
      }
      if (!config.checkpoint_dir.empty() && config.checkpoint_every > 0 &&
          step % config.checkpoint_every == 0) {
        char name[32];
        std::snprintf(name, sizeof(name), "step-%06ld.ckpt", step);
        write_checkpoint(name, epoch);
      }
    }
  }
  result.steps = step;
  if (!config.checkpoint_dir.empty()) write_checkpoint("final.ckpt", config.epochs - 1);
  return result;
}

}  // namespace reveal
