#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "reveal/encoders.hpp"
#include "reveal/mm_nce.hpp"
#include "reveal/shards.hpp"

namespace reveal {

enum class PathwayMode { kPerPathway, kPooled };
enum class RelationEncoderMode { kTrainable, kFrozen };
enum class LossKind { kMmNce, kMatchedMse };

struct TrainConfig {
  double base_lr = 5e-5;
  double warmup_fraction = 0.20;
  double final_lr_fraction = 0.05;
  int epochs = 5;
  int grad_accum_steps = 4;
  double grad_clip_norm = 1.0;
  double weight_decay = 0.1;
  std::uint64_t seed = 0;
  int relation_cap = 8;
  PathwayMode pathway_mode = PathwayMode::kPerPathway;
  RelationEncoderMode relation_encoder_mode = RelationEncoderMode::kTrainable;
  LossKind loss = LossKind::kMmNce;
  Reduction reduction = Reduction::kMean;
  bool include_unmatched_queries = true;

  /// Samples per micro-batch; the contrastive negatives come from it.
  int batch_size = 16;
  /// Optimizer steps cap; 0 runs every epoch to completion.
  int max_steps = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Keeps log(1/tau) in [0, log 100], i.e. tau in [0.01, 1].
  bool clamp_logit_scale = true;
  std::size_t shuffle_buffer = 5000;
  std::size_t shuffle_initial = 1000;
  int log_every = 1;
  /// 0 disables periodic checkpoints; a final one is written whenever
  /// checkpoint_dir is set.
  int checkpoint_every = 0;
  std::string checkpoint_dir;

  void validate() const;
  /// Sets one field from its textual form. Throws ConfigError on an unknown
  /// key or an unparsable value.
  void set(const std::string& key, const std::string& value);
  static const std::vector<std::string>& keys();
  nlohmann::json to_json() const;
};

/// Model keys accepted in config files and as flags. Pathway keys
/// (hidden, heads, ...) apply to both pathways; "fast.<key>" and
/// "slow.<key>" address one. Relation keys: backend (toy|table),
/// backend_dim, table_path, table_fallback_to_toy, output_dim;
/// model_seed and init_log_logit_scale set the remaining fields.
const std::vector<std::string>& model_option_keys();
/// Throws ConfigError on an unknown key or an unparsable value.
void set_model_option(ModelConfig& config, const std::string& key, const std::string& value);

/// Reads "key = value" lines. Blank lines and lines starting with '#' are
/// skipped. Throws ConfigError naming the path when it cannot be read, and
/// on lines without '=' or repeated keys.
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

/// Linear warmup from 0 to base_lr over warmup_fraction * total_steps, then
/// cosine decay to final_lr_fraction * base_lr at total_steps.
double lr_at(long step, long total_steps, const TrainConfig& config);

/// Decoupled-weight-decay Adam. Parameters of kind kWeight and kEmbedding
/// are decayed; biases, norms and the logit scale are not. Parameters that
/// do not require gradients are skipped.
class AdamW {
 public:
  AdamW(nn::ParameterList params, double beta1, double beta2, double eps, double weight_decay);
  void step(double lr);
  void zero_grad();
  long steps() const { return t_; }

 private:
  struct Slot {
    nn::NamedParameter param;
    Matrix m;
    Matrix v;
  };
  std::vector<Slot> slots_;
  double beta1_, beta2_, eps_, weight_decay_;
  long t_ = 0;
};

/// Global L2 norm of the gradients of `params` that require them.
double global_grad_norm(const nn::ParameterList& params);
/// Scales gradients so their global norm is at most max_norm. Returns the
/// norm before clipping.
double clip_grad_norm(const nn::ParameterList& params, double max_norm);

class MetricsSink {
 public:
  virtual ~MetricsSink() = default;
  virtual void write(const nlohmann::json& record) = 0;
};

/// One compact JSON object per line.
class JsonLinesSink final : public MetricsSink {
 public:
  explicit JsonLinesSink(std::ostream& out) : out_(out) {}
  void write(const nlohmann::json& record) override;

 private:
  std::ostream& out_;
};

class NullSink final : public MetricsSink {
 public:
  void write(const nlohmann::json&) override {}
};

/// Emits the samples of one epoch.
class SampleStream {
 public:
  virtual ~SampleStream() = default;
  virtual std::optional<VideoSample> next() = 0;
};

/// Sample source for training: a fresh stream per epoch plus the epoch size.
struct SampleSource {
  std::function<std::unique_ptr<SampleStream>(int epoch)> open;
  std::size_t size = 0;
};

/// Shuffled shard streaming; epoch e reshuffles with seed + e.
SampleSource shard_source(const std::vector<std::filesystem::path>& shards, const TrainConfig& config);
/// In-memory samples, permuted per epoch from seed + e.
SampleSource memory_source(std::span<const VideoSample> samples, std::uint64_t seed);

struct StepMetrics {
  long step = 0;
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double q_to_r = 0.0;
  double r_to_q = 0.0;
  double grad_norm = 0.0;          // before clipping
  double clipped_grad_norm = 0.0;  // after clipping
  double tau = 0.0;
};

struct TrainResult {
  long steps = 0;
  long total_steps = 0;
  std::vector<StepMetrics> history;
};

/// Optimizer steps the configuration schedules for an epoch of `samples`.
long steps_per_epoch(std::size_t samples, const TrainConfig& config);

/// Loss of one micro-batch under the configured objective and pathway mode.
LossTerms batch_loss(const DualPathwayModel& model, const std::vector<ForwardOutput>& outputs,
                     const TrainConfig& config);

/// Runs the optimization. Deterministic for a fixed seed. DegenerateVector
/// propagates with the step number attached; IoError on checkpoint writes.
TrainResult train(DualPathwayModel& model, const SampleSource& source, const TrainConfig& config,
                  MetricsSink& sink);

}  // namespace reveal
