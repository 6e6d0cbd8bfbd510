#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "reveal/errors.hpp"
#include "reveal/synthetic.hpp"
#include "reveal/training.hpp"
#include "test_support.hpp"

namespace reveal {
namespace {

TEST(LrScheduleTest, Endpoints) {
  const TrainConfig c;
  EXPECT_EQ(lr_at(0, 1000, c), 0.0);
  EXPECT_EQ(lr_at(200, 1000, c), 5e-5);
  EXPECT_EQ(lr_at(1000, 1000, c), 2.5e-6);
  EXPECT_EQ(lr_at(0, 37, c), 0.0);
  EXPECT_EQ(lr_at(37, 37, c), 2.5e-6);
}

TEST(LrScheduleTest, WarmupRisesThenCosineFalls) {
  const TrainConfig c;
  EXPECT_DOUBLE_EQ(lr_at(100, 1000, c), 2.5e-5);
  for (long s = 1; s <= 200; ++s) EXPECT_GT(lr_at(s, 1000, c), lr_at(s - 1, 1000, c));
  for (long s = 201; s <= 1000; ++s) EXPECT_LT(lr_at(s, 1000, c), lr_at(s - 1, 1000, c));
  // Halfway through the decay the cosine term is 1/2.
  EXPECT_NEAR(lr_at(600, 1000, c), 2.5e-6 + 0.5 * (5e-5 - 2.5e-6), 1e-18);
  EXPECT_THROW(lr_at(1001, 1000, c), PreconditionError);
  EXPECT_THROW(lr_at(-1, 1000, c), PreconditionError);
}

nn::ParameterList single(const ag::Variable& v, nn::ParamKind kind) {
  return {{"p", v, kind}};
}

TEST(AdamWTest, FirstStepMatchesHandComputation) {
  ag::Variable w(Matrix::Constant(1, 1, 1.0), true);
  ag::Variable b(Matrix::Constant(1, 1, 1.0), true);
  nn::ParameterList params = {{"w", w, nn::ParamKind::kWeight}, {"b", b, nn::ParamKind::kBias}};
  AdamW opt(params, 0.9, 0.999, 1e-8, 0.1);
  w.accumulate_grad(Matrix::Constant(1, 1, 0.5));
  b.accumulate_grad(Matrix::Constant(1, 1, 0.5));
  opt.step(0.01);
  // Bias-corrected first step moves by lr * g / (|g| + eps).
  const double adam = 0.01 * 0.5 / (0.5 + 1e-8);
  EXPECT_NEAR(w.scalar(), 1.0 * (1.0 - 0.01 * 0.1) - adam, 1e-15);
  EXPECT_NEAR(b.scalar(), 1.0 - adam, 1e-15);
  EXPECT_EQ(opt.steps(), 1);
  opt.zero_grad();
  EXPECT_FALSE(w.has_grad());
}

TEST(AdamWTest, DecayAppliesOnlyToWeightsAndEmbeddings) {
  for (auto kind : {nn::ParamKind::kWeight, nn::ParamKind::kEmbedding, nn::ParamKind::kBias,
                    nn::ParamKind::kNorm, nn::ParamKind::kScale}) {
    ag::Variable v(Matrix::Constant(2, 2, 2.0), true);
    AdamW opt(single(v, kind), 0.9, 0.999, 1e-8, 0.5);
    opt.step(0.1);
    const bool decays = kind == nn::ParamKind::kWeight || kind == nn::ParamKind::kEmbedding;
    EXPECT_DOUBLE_EQ(v.value()(0, 0), decays ? 2.0 * (1.0 - 0.05) : 2.0);
  }
}

TEST(AdamWTest, SkipsFrozenParameters) {
  ag::Variable v(Matrix::Constant(1, 1, 3.0), false);
  AdamW opt(single(v, nn::ParamKind::kWeight), 0.9, 0.999, 1e-8, 0.5);
  opt.step(0.1);
  EXPECT_EQ(v.scalar(), 3.0);
}

TEST(ClipGradNormTest, BoundsGlobalNormAndReportsPreClipNorm) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ag::Variable a(Matrix::Zero(3, 4), true), b(Matrix::Zero(1, 5), true);
    const double scale = 0.1 + static_cast<double>(seed);
    a.accumulate_grad(testing::gaussian(3, 4, seed, scale));
    b.accumulate_grad(testing::gaussian(1, 5, seed + 100, scale));
    const nn::ParameterList params = {{"a", a, nn::ParamKind::kWeight},
                                      {"b", b, nn::ParamKind::kBias}};
    const double before = std::sqrt(a.grad().squaredNorm() + b.grad().squaredNorm());
    const Matrix ga = a.grad();
    EXPECT_NEAR(clip_grad_norm(params, 1.0), before, 1e-12);
    const double after = global_grad_norm(params);
    EXPECT_LE(after, 1.0 + 1e-6);
    if (before <= 1.0) {
      EXPECT_TRUE(a.grad() == ga);
    } else {
      EXPECT_NEAR(after, 1.0, 1e-9);
      EXPECT_TRUE(a.grad().isApprox(ga / before, 1e-12));
    }
  }
}

TEST(TrainConfigTest, SetParsesKnownKeysAndRejectsOthers) {
  TrainConfig c;
  c.set("base_lr", "1e-3");
  c.set("pathway_mode", "pooled");
  c.set("relation_encoder_mode", "frozen");
  c.set("loss", "matched-mse");
  c.set("reduction", "sum");
  c.set("include_unmatched_queries", "false");
  EXPECT_EQ(c.base_lr, 1e-3);
  EXPECT_EQ(c.pathway_mode, PathwayMode::kPooled);
  EXPECT_EQ(c.relation_encoder_mode, RelationEncoderMode::kFrozen);
  EXPECT_EQ(c.loss, LossKind::kMatchedMse);
  EXPECT_EQ(c.reduction, Reduction::kSum);
  EXPECT_FALSE(c.include_unmatched_queries);
  EXPECT_THROW(c.set("nope", "1"), ConfigError);
  EXPECT_THROW(c.set("epochs", "two"), ConfigError);
  EXPECT_THROW(c.set("pathway_mode", "sideways"), ConfigError);
  for (const auto& key : TrainConfig::keys()) EXPECT_TRUE(c.to_json().contains(key)) << key;

  TrainConfig bad;
  bad.grad_accum_steps = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = {};
  bad.warmup_fraction = 1.5;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(TrainConfigTest, ModelOptionsReachBothPathways) {
  ModelConfig m;
  set_model_option(m, "hidden", "32");
  set_model_option(m, "slow.num_queries", "3");
  set_model_option(m, "output_dim", "16");
  EXPECT_EQ(m.fast.hidden, 32);
  EXPECT_EQ(m.slow.hidden, 32);
  EXPECT_EQ(m.fast.num_queries, 8);
  EXPECT_EQ(m.slow.num_queries, 3);
  EXPECT_EQ(m.relation.output_dim, 16);
  EXPECT_EQ(m.fast.output_dim, 16);
  EXPECT_THROW(set_model_option(m, "wings", "2"), ConfigError);
}

TEST(ConfigFileTest, ReadsKeyValueLines) {
  testing::TempDir dir;
  {
    std::ofstream out(dir / "train.cfg");
    out << "# recipe\n\nbase_lr = 5e-5\n  epochs=3   # inline\nloss = matched-mse\n";
  }
  const auto kv = read_config_file(dir / "train.cfg");
  EXPECT_EQ(kv.at("base_lr"), "5e-5");
  EXPECT_EQ(kv.at("epochs"), "3");
  EXPECT_EQ(kv.at("loss"), "matched-mse");
  {
    std::ofstream out(dir / "dup.cfg");
    out << "epochs = 1\nepochs = 2\n";
  }
  EXPECT_THROW(read_config_file(dir / "dup.cfg"), ConfigError);
  {
    std::ofstream out(dir / "bad.cfg");
    out << "epochs 1\n";
  }
  EXPECT_THROW(read_config_file(dir / "bad.cfg"), ConfigError);
  EXPECT_THROW(read_config_file(dir / "missing.cfg"), ConfigError);
}

struct TinySetup {
  SyntheticDataset data;
  ModelConfig model;
};

TinySetup tiny_setup(double noise, int samples = 64, int concepts = 8) {
  SyntheticConfig s;
  s.concepts = concepts;
  s.samples = samples;
  s.noise = noise;
  s.rel_dim = 8;
  s.vis_dim = 12;
  s.fast_frames = 4;
  s.slow_frames = 2;
  s.patches_per_frame = 2;
  s.min_relations = 2;
  s.max_relations = 3;
  TinySetup out{generate_synthetic(s), testing::tiny_model(12, 8)};
  out.model.relation.backend_dim = 8;
  return out;
}

TrainConfig tiny_train() {
  TrainConfig c;
  c.batch_size = 4;
  c.grad_accum_steps = 2;
  c.epochs = 100;
  c.base_lr = 3e-3;
  return c;
}

TEST(TrainTest, StepsPerEpochDropsPartialBatches) {
  TrainConfig c;
  EXPECT_EQ(steps_per_epoch(512, c), 8);
  EXPECT_EQ(steps_per_epoch(127, c), 1);
  EXPECT_EQ(steps_per_epoch(63, c), 0);
}

TEST(TrainTest, SmokeRunLowersTheLoss) {
  auto setup = tiny_setup(0.0, 64, 8);
  DualPathwayModel model(setup.model);
  TrainConfig c = tiny_train();
  c.max_steps = 50;
  NullSink sink;
  const auto result = train(model, memory_source(setup.data.samples, 1), c, sink);
  ASSERT_EQ(result.steps, 50);
  ASSERT_EQ(result.history.size(), 50u);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) {
    first += result.history[static_cast<std::size_t>(i)].loss / 10.0;
    last += result.history[static_cast<std::size_t>(40 + i)].loss / 10.0;
  }
  EXPECT_LT(last, first);
  for (const auto& m : result.history) {
    EXPECT_TRUE(std::isfinite(m.loss));
    EXPECT_LE(m.clipped_grad_norm, 1.0 + 1e-6);
    EXPECT_NEAR(m.loss, m.q_to_r + m.r_to_q, 1e-9);
    EXPECT_GE(m.tau, 0.01 - 1e-15);
    EXPECT_LE(m.tau, 1.0);
  }
  EXPECT_EQ(result.history.back().lr, 2.5e-6 / 5e-5 * 3e-3);
}

TEST(TrainTest, DeterministicUnderFixedSeed) {
  auto setup = tiny_setup(0.05, 32);
  TrainConfig c = tiny_train();
  c.max_steps = 6;
  NullSink sink;
  DualPathwayModel a(setup.model), b(setup.model);
  const auto ra = train(a, memory_source(setup.data.samples, 3), c, sink);
  const auto rb = train(b, memory_source(setup.data.samples, 3), c, sink);
  for (std::size_t i = 0; i < ra.history.size(); ++i) {
    EXPECT_EQ(ra.history[i].loss, rb.history[i].loss);
  }
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE(pa[i].variable.value() == pb[i].variable.value()) << pa[i].name;
  }
}

TEST(TrainTest, FrozenRelationEncoderIsUntouched) {
  auto setup = tiny_setup(0.05, 32);
  TrainConfig c = tiny_train();
  c.max_steps = 4;
  c.relation_encoder_mode = RelationEncoderMode::kFrozen;
  DualPathwayModel model(setup.model);
  std::map<std::string, Matrix> before;
  for (const auto& p : model.parameters()) before[p.name] = p.variable.value();
  NullSink sink;
  train(model, memory_source(setup.data.samples, 0), c, sink);
  for (const auto& p : model.parameters()) {
    if (p.name.starts_with("relation.")) {
      EXPECT_TRUE(p.variable.value() == before[p.name]) << p.name;
    } else if (p.name == "fast.queries") {
      EXPECT_FALSE(p.variable.value() == before[p.name]);
    }
  }
}

TEST(TrainTest, MatchedMseAndPooledModesRun) {
  auto setup = tiny_setup(0.05, 32);
  TrainConfig c = tiny_train();
  c.max_steps = 3;
  NullSink sink;
  c.loss = LossKind::kMatchedMse;
  DualPathwayModel a(setup.model);
  const auto ra = train(a, memory_source(setup.data.samples, 0), c, sink);
  EXPECT_EQ(ra.steps, 3);
  EXPECT_EQ(ra.history[0].q_to_r, 0.0);
  c.loss = LossKind::kMmNce;
  c.pathway_mode = PathwayMode::kPooled;
  DualPathwayModel b(setup.model);
  EXPECT_EQ(train(b, memory_source(setup.data.samples, 0), c, sink).steps, 3);
}

TEST(TrainTest, LogitScaleIsClamped) {
  auto setup = tiny_setup(0.05, 32);
  setup.model.init_log_logit_scale = 10.0;
  TrainConfig c = tiny_train();
  c.max_steps = 1;
  DualPathwayModel model(setup.model);
  NullSink sink;
  train(model, memory_source(setup.data.samples, 0), c, sink);
  EXPECT_LE(model.log_logit_scale().scalar(), std::log(100.0));
}

TEST(TrainTest, WritesMetricsAndCheckpoints) {
  testing::TempDir dir;
  auto setup = tiny_setup(0.05, 32);
  TrainConfig c = tiny_train();
  c.max_steps = 4;
  c.checkpoint_every = 2;
  c.checkpoint_dir = (dir / "ckpt").string();
  DualPathwayModel model(setup.model);
  std::ostringstream log;
  JsonLinesSink sink(log);
  train(model, memory_source(setup.data.samples, 0), c, sink);
  std::istringstream lines(log.str());
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("loss"));
    EXPECT_TRUE(j.contains("lr"));
    ++count;
  }
  EXPECT_EQ(count, 4);
  EXPECT_TRUE(std::filesystem::exists(dir / "ckpt/step-000002.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "ckpt/final.ckpt"));
  const auto back = load_checkpoint(dir / "ckpt/final.ckpt");
  EXPECT_TRUE(back.log_logit_scale().value() == model.log_logit_scale().value());
}

TEST(TrainTest, ShardSourceStreamsEveryEpoch) {
  testing::TempDir dir;
  auto setup = tiny_setup(0.05, 24);
  const auto paths = write_shards(setup.data.samples, 10, dir.path());
  TrainConfig c = tiny_train();
  c.shuffle_buffer = 8;
  c.shuffle_initial = 4;
  const SampleSource source = shard_source(paths, c);
  EXPECT_EQ(source.size, 24u);
  std::vector<std::string> e0, e1;
  for (auto* ids : {&e0, &e1}) {
    auto stream = source.open(ids == &e0 ? 0 : 1);
    while (auto s = stream->next()) ids->push_back(s->video_id);
  }
  EXPECT_EQ(e0.size(), 24u);
  EXPECT_EQ(e1.size(), 24u);
  EXPECT_NE(e0, e1);
}

TEST(TrainTest, TooSmallDatasetIsRejected) {
  auto setup = tiny_setup(0.05, 7);
  DualPathwayModel model(setup.model);
  NullSink sink;
  EXPECT_THROW(train(model, memory_source(setup.data.samples, 0), tiny_train(), sink),
               PreconditionError);
}

}  // namespace
}  // namespace reveal
