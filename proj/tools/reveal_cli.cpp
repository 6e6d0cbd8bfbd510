// Command-line entry point: reveal <subcommand> [options]
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "reveal/alignment.hpp"
#include "reveal/clip_grouping.hpp"
#include "reveal/encoders.hpp"
#include "reveal/errors.hpp"
#include "reveal/evaluation.hpp"
#include "reveal/extraction.hpp"
#include "reveal/shards.hpp"
#include "reveal/synthetic.hpp"
#include "reveal/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace reveal::cli {
namespace {

// Writes next to the target and renames, so readers never see a partial file.
void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out.flush()) throw IoError("write to '" + tmp.string() + "' failed");
  }
  fs::rename(tmp, path);
}

void emit(const std::string& out_path, const std::string& content) {
  if (out_path.empty() || out_path == "-") {
    std::cout << content << std::flush;
  } else {
    write_atomic(out_path, content);
  }
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PreconditionError("cannot read '" + path + "'");
  return in;
}

json triplet_json(const RelationTriplet& t) {
  return {{"subject", t.subject()},
          {"predicate", t.predicate()},
          {"object", t.object() ? json(*t.object()) : json(nullptr)}};
}

RelationTriplet triplet_from_json(const json& j) {
  std::optional<std::string> object;
  if (j.contains("object") && !j.at("object").is_null()) object = j.at("object").get<std::string>();
  return RelationTriplet(j.at("subject").get<std::string>(), j.at("predicate").get<std::string>(),
                         std::move(object));
}

Matrix matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty() || !j.front().is_array()) {
    throw PreconditionError(what + " must be a non-empty array of rows");
  }
  const auto rows = static_cast<Index>(j.size());
  const auto cols = static_cast<Index>(j.front().size());
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const auto& row = j.at(static_cast<std::size_t>(r));
    if (static_cast<Index>(row.size()) != cols) throw ShapeError(what + " rows differ in length");
    for (Index c = 0; c < cols; ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

void banner(const std::string& command, std::uint64_t seed, const json& config) {
  spdlog::info("reveal {} seed={} config={}", command, seed, config.dump());
}

// Options whose values are collected as text and applied after the config
// file, so flags override file entries.
struct KeyedOptions {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void add(CLI::App* app, const std::string& key, const std::string& help) {
    options[key] = app->add_option("--" + key, values[key], help);
  }
  std::map<std::string, std::string> given() const {
    std::map<std::string, std::string> out;
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) out[key] = values.at(key);
    }
    return out;
  }
};

// ---------------------------------------------------------------- extract

struct ExtractArgs {
  std::string captions;
  std::string responses;
  std::string out;
  std::size_t max_in_flight = 4;
  std::size_t max_words_per_field = 8;
  double timeout = 60.0;
};

int run_extract(const ExtractArgs& a) {
  std::vector<std::string> captions;
  {
    auto in = open_input(a.captions);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) captions.push_back(line);
    }
  }
  banner("extract", 0,
         {{"captions", a.captions}, {"responses", a.responses}, {"out", a.out},
          {"max_in_flight", a.max_in_flight}, {"max_words_per_field", a.max_words_per_field},
          {"timeout", a.timeout}});
  std::unique_ptr<LlmClient> client;
  if (!a.responses.empty()) {
    client = std::make_unique<MockLlmClient>(MockLlmClient::from_json_file(a.responses));
  } else {
    client = std::make_unique<HttpLlmClient>(HttpLlmClient::from_environment(a.timeout));
  }
  TripletFilter filter{a.max_words_per_field};
  ExtractionStats stats;
  const auto results = extract_all(captions, *client, a.max_in_flight, filter, &stats);
  std::ostringstream out;
  std::size_t failed = 0;
  for (const auto& r : results) {
    json line = {{"caption", r.caption}, {"triplets", json::array()}};
    for (const auto& t : r.triplets) line["triplets"].push_back(triplet_json(t));
    if (r.error) {
      line["error"] = *r.error;
      ++failed;
    }
    out << line.dump() << '\n';
  }
  emit(a.out, out.str());
  spdlog::info("extract: {} captions, {} failed, {} lines, {} parsed, {} malformed, {} too long, "
               "{} duplicates",
               captions.size(), failed, stats.lines, stats.parsed, stats.malformed, stats.too_long,
               stats.duplicates);
  return 0;
}

// ------------------------------------------------------------ group-clips

int run_group_clips(const std::string& input, const std::string& out_path) {
  banner("group-clips", 0, {{"input", input}, {"out", out_path}});
  std::vector<TemporalRelation> relations;
  auto in = open_input(input);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      relations.emplace_back(triplet_from_json(j), j.at("start").get<std::int64_t>(),
                             j.at("end").get<std::int64_t>());
    } catch (const json::exception& e) {
      throw PreconditionError(input + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  json clips = json::array();
  for (const auto& clip : group_clips(relations)) {
    json c = {{"start_frame", clip.start_frame},
              {"end_frame", clip.end_frame},
              {"relations", json::array()}};
    for (const auto& r : clip.relations) {
      json t = triplet_json(r.triplet);
      t["start"] = r.start_frame;
      t["end"] = r.end_frame;
      c["relations"].push_back(std::move(t));
    }
    clips.push_back(std::move(c));
  }
  emit(out_path, clips.dump(2) + "\n");
  return 0;
}

// --------------------------------------------------------- make-synthetic

int run_make_synthetic(const SyntheticConfig& config, const std::string& out_dir,
                       std::size_t shard_size) {
  config.validate();
  if (shard_size < 1) throw ConfigError("shard_size must be positive");
  banner("make-synthetic", config.seed,
         {{"concepts", config.concepts}, {"samples", config.samples}, {"rel_dim", config.rel_dim},
          {"vis_dim", config.vis_dim}, {"min_relations", config.min_relations},
          {"max_relations", config.max_relations}, {"fast_frames", config.fast_frames},
          {"slow_frames", config.slow_frames}, {"patches_per_frame", config.patches_per_frame},
          {"noise", config.noise}, {"mixing", config.mixing}, {"seed", config.seed},
          {"out", out_dir}, {"shard_size", shard_size}});
  const auto ds = generate_synthetic(config);
  const auto paths = write_shards(ds.samples, shard_size, out_dir);
  spdlog::info("wrote {} samples into {} shards under {}", ds.samples.size(), paths.size(), out_dir);
  return 0;
}

// ------------------------------------------------------------------ shard

int run_shard(const std::string& input, const std::string& out_dir, std::size_t shard_size) {
  if (shard_size < 1) throw ConfigError("shard_size must be positive");
  banner("shard", 0, {{"input", input}, {"out", out_dir}, {"shard_size", shard_size}});
  std::vector<VideoSample> samples;
  auto in = open_input(input);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = input + ":" + std::to_string(lineno);
    try {
      const json j = json::parse(line);
      VideoSample s;
      s.video_id = j.at("video_id").get<std::string>();
      s.fast_tokens = matrix_from_json(j.at("fast_tokens"), where + " fast_tokens");
      s.slow_tokens = matrix_from_json(j.at("slow_tokens"), where + " slow_tokens");
      std::vector<RelationTriplet> triplets;
      for (const auto& t : j.at("triplets")) triplets.push_back(triplet_from_json(t));
      s.relations = RelationSet(s.video_id, triplets);
      s.validate();
      samples.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw PreconditionError(where + ": " + e.what());
    }
  }
  const auto paths = write_shards(samples, shard_size, out_dir);
  spdlog::info("wrote {} samples into {} shards under {}", samples.size(), paths.size(), out_dir);
  return 0;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string data;
  std::string config;
  std::string out;
  std::string metrics;
  std::string init_checkpoint;
  KeyedOptions keys;
};

int run_train(TrainArgs& a) {
  std::map<std::string, std::string> settings;
  if (!a.config.empty()) settings = read_config_file(a.config);
  for (const auto& [k, v] : a.keys.given()) settings[k] = v;
  if (!a.out.empty()) settings["checkpoint_dir"] = a.out;

  TrainConfig train_config;
  ModelConfig model_config;
  bool model_keys = false;
  bool input_dim_set = false;
  const auto& train_keys = TrainConfig::keys();
  for (const auto& [key, value] : settings) {
    if (std::find(train_keys.begin(), train_keys.end(), key) != train_keys.end()) {
      train_config.set(key, value);
    } else {
      set_model_option(model_config, key, value);
      model_keys = true;
      input_dim_set = input_dim_set || key.ends_with("input_dim");
    }
  }
  train_config.validate();
  if (model_keys && !a.init_checkpoint.empty()) {
    throw ConfigError("model options cannot be combined with --init_checkpoint");
  }

  const auto shards = list_shards(a.data);
  if (shards.empty()) throw PreconditionError("no shards found at '" + a.data + "'");
  if (!input_dim_set && a.init_checkpoint.empty()) {
    ShardReader probe(shards, {1, 1}, 0);
    auto first = probe.next();
    if (!first) throw PreconditionError("'" + a.data + "' holds no readable samples");
    model_config.fast.input_dim = first->fast_tokens.cols();
    model_config.slow.input_dim = first->slow_tokens.cols();
  }

  std::optional<DualPathwayModel> model;
  if (!a.init_checkpoint.empty()) {
    model.emplace(load_checkpoint(a.init_checkpoint));
  } else {
    model_config.validate();
    model.emplace(model_config);
  }
  banner("train", train_config.seed,
         {{"data", a.data}, {"train", train_config.to_json()}, {"model", model->config().to_json()},
          {"init_checkpoint", a.init_checkpoint}, {"parameters", model->parameter_count()}});

  std::ofstream metrics_file;
  std::ostream* metrics_out = &std::cout;
  if (!a.metrics.empty() && a.metrics != "-") {
    if (fs::path(a.metrics).has_parent_path()) fs::create_directories(fs::path(a.metrics).parent_path());
    metrics_file.open(a.metrics, std::ios::trunc);
    if (!metrics_file) throw IoError("cannot write metrics to '" + a.metrics + "'");
    metrics_out = &metrics_file;
  }
  JsonLinesSink sink(*metrics_out);
  const auto result = train(*model, shard_source(shards, train_config), train_config, sink);
  spdlog::info("trained {} of {} optimizer steps", result.steps, result.total_steps);
  return 0;
}

// ------------------------------------------------------------------- eval

int run_eval(const std::string& checkpoint, const std::string& data, const EvalOptions& options,
             const std::string& out) {
  banner("eval", options.seed,
         {{"checkpoint", checkpoint}, {"data", data}, {"batch_size", options.batch_size},
          {"pathway_mode", options.pathway_mode == PathwayMode::kPooled ? "pooled" : "per-pathway"},
          {"relation_cap", options.relation_cap}, {"seed", options.seed}});
  const auto model = load_checkpoint(checkpoint);
  ReadStats stats;
  const auto samples = read_all_samples(data, &stats);
  const auto report = retrieval_eval(model, samples, options);
  json doc = report.to_json();
  doc["corrupt_samples_skipped"] = stats.corrupt;
  emit(out, doc.dump(2) + "\n");
  return 0;
}

// ------------------------------------------------------------------ trace

int run_trace(const std::string& checkpoint, const std::string& data,
              const std::string& relations_path, const std::string& out) {
  banner("trace", 0,
         {{"checkpoint", checkpoint}, {"data", data}, {"relations", relations_path}, {"out", out}});
  std::vector<RelationTriplet> relations;
  {
    auto in = open_input(relations_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      relations.push_back(parse_triplet_line(line));
    }
  }
  if (relations.empty()) throw PreconditionError("'" + relations_path + "' lists no relations");
  const auto model = load_checkpoint(checkpoint);
  const auto segments = read_all_samples(data);
  const auto trace = alignment_trace(model, segments, relations);
  std::ostringstream csv;
  write_trace_csv(csv, trace);
  emit(out, csv.str());
  return 0;
}

// ------------------------------------------------------------- dump-match

struct DumpArgs {
  std::string checkpoint;
  std::string data;
  std::size_t index = 0;
  std::string pathway = "fast";
  int relations = 0;
  int queries = 0;
  std::uint64_t seed = 0;
  int relation_cap = 8;
  std::string out;
};

int run_dump_match(const DumpArgs& a) {
  banner("dump-match", a.seed,
         {{"checkpoint", a.checkpoint}, {"data", a.data}, {"index", a.index},
          {"pathway", a.pathway}, {"relations", a.relations}, {"queries", a.queries},
          {"relation_cap", a.relation_cap}, {"seed", a.seed}});
  Matrix similarity;
  if (!a.checkpoint.empty()) {
    if (a.data.empty()) throw ConfigError("--checkpoint needs --data");
    if (a.pathway != "fast" && a.pathway != "slow") throw ConfigError("--pathway must be fast or slow");
    const auto model = load_checkpoint(a.checkpoint);
    const auto samples = read_all_samples(a.data);
    if (a.index >= samples.size()) {
      throw PreconditionError("--index " + std::to_string(a.index) + " out of range (" +
                              std::to_string(samples.size()) + " samples)");
    }
    ag::NoGradGuard no_grad;
    std::mt19937_64 rng(a.seed);
    const auto out = model.forward(samples[a.index], rng, static_cast<std::size_t>(a.relation_cap));
    const auto& queries = a.pathway == "fast" ? out.fast.queries : out.slow.queries;
    similarity = cosine_matrix(out.relations.value(), queries.value());
  } else {
    if (a.relations < 1 || a.queries < 1) {
      throw ConfigError("give --checkpoint/--data or positive --relations and --queries");
    }
    similarity = random_similarity(a.relations, a.queries, a.seed);
  }
  const Assignment assignment = optimal_assignment(similarity);
  std::ostringstream csv;
  write_match_csv(csv, similarity, assignment);
  emit(a.out, csv.str());
  return 0;
}

PathwayMode parse_pathway_mode(const std::string& s) {
  if (s == "per-pathway") return PathwayMode::kPerPathway;
  if (s == "pooled") return PathwayMode::kPooled;
  throw ConfigError("pathway_mode must be per-pathway or pooled");
}

int run(int argc, char** argv) {
  CLI::App app{"Relation-aligned video query training toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all subcommand help");

  ExtractArgs extract;
  auto* ex = app.add_subcommand("extract", "Decompose captions into relation triplets");
  ex->add_option("--captions", extract.captions, "Text file, one caption per line")->required();
  ex->add_option("--responses", extract.responses,
                 "JSON object of canned responses keyed by caption; otherwise the HTTP client "
                 "reads REVEAL_LLM_ENDPOINT");
  ex->add_option("--out", extract.out, "JSON-lines output (stdout if omitted)");
  ex->add_option("--max_in_flight", extract.max_in_flight, "Concurrent requests")->capture_default_str();
  ex->add_option("--max_words_per_field", extract.max_words_per_field,
                 "Drop triplets with longer fields")->capture_default_str();
  ex->add_option("--timeout", extract.timeout, "HTTP timeout in seconds")->capture_default_str();

  std::string gc_input, gc_out;
  auto* gc = app.add_subcommand("group-clips", "Split temporally annotated relations into clips");
  gc->add_option("--input", gc_input,
                 "JSON lines {subject, predicate, object, start, end}")->required();
  gc->add_option("--out", gc_out, "JSON output (stdout if omitted)");

  SyntheticConfig syn;
  std::string syn_out;
  std::size_t syn_shard_size = 128;
  auto* ms = app.add_subcommand("make-synthetic", "Generate a planted-concept dataset as shards");
  ms->add_option("--concepts", syn.concepts)->capture_default_str();
  ms->add_option("--samples", syn.samples)->capture_default_str();
  ms->add_option("--rel_dim", syn.rel_dim)->capture_default_str();
  ms->add_option("--vis_dim", syn.vis_dim)->capture_default_str();
  ms->add_option("--min_relations", syn.min_relations)->capture_default_str();
  ms->add_option("--max_relations", syn.max_relations)->capture_default_str();
  ms->add_option("--fast_frames", syn.fast_frames)->capture_default_str();
  ms->add_option("--slow_frames", syn.slow_frames)->capture_default_str();
  ms->add_option("--patches_per_frame", syn.patches_per_frame)->capture_default_str();
  ms->add_option("--noise", syn.noise)->capture_default_str();
  ms->add_option("--mixing", syn.mixing)->capture_default_str();
  ms->add_option("--seed", syn.seed)->capture_default_str();
  ms->add_option("--out", syn_out, "Output directory")->required();
  ms->add_option("--shard_size", syn_shard_size, "Samples per shard")->capture_default_str();

  std::string sh_input, sh_out;
  std::size_t sh_size = 128;
  auto* sh = app.add_subcommand("shard", "Pack JSON-lines samples into tar shards");
  sh->add_option("--input", sh_input,
                 "JSON lines {video_id, fast_tokens, slow_tokens, triplets}")->required();
  sh->add_option("--out", sh_out, "Output directory")->required();
  sh->add_option("--shard_size", sh_size, "Samples per shard")->capture_default_str();

  TrainArgs tr;
  auto* tn = app.add_subcommand("train", "Train the dual-pathway model");
  tn->add_option("--data", tr.data, "Shard file or directory")->required();
  tn->add_option("--config", tr.config, "Flat key = value config file");
  tn->add_option("--out", tr.out, "Checkpoint directory (sets checkpoint_dir)");
  tn->add_option("--metrics", tr.metrics, "JSON-lines metrics file (stdout if omitted)");
  tn->add_option("--init_checkpoint", tr.init_checkpoint, "Start from these weights");
  for (const auto& key : TrainConfig::keys()) tr.keys.add(tn, key, "training option");
  for (const auto& key : model_option_keys()) tr.keys.add(tn, key, "model option");

  std::string ev_ckpt, ev_data, ev_out, ev_mode = "per-pathway";
  EvalOptions ev;
  auto* evc = app.add_subcommand("eval", "In-batch retrieval metrics");
  evc->add_option("--checkpoint", ev_ckpt)->required();
  evc->add_option("--data", ev_data, "Shard file or directory")->required();
  evc->add_option("--batch_size", ev.batch_size)->capture_default_str();
  evc->add_option("--pathway_mode", ev_mode, "per-pathway or pooled")->capture_default_str();
  evc->add_option("--relation_cap", ev.relation_cap)->capture_default_str();
  evc->add_option("--seed", ev.seed)->capture_default_str();
  evc->add_option("--out", ev_out, "JSON report (stdout if omitted)");

  std::string tr_ckpt, tr_data, tr_rel, tr_out;
  auto* tc = app.add_subcommand("trace", "Per-segment relation alignment scores as CSV");
  tc->add_option("--checkpoint", tr_ckpt)->required();
  tc->add_option("--data", tr_data, "Segments in storage order")->required();
  tc->add_option("--relations", tr_rel,
                 "One \"Subject: .., Predicate: .., Object: ..\" line per relation")->required();
  tc->add_option("--out", tr_out, "CSV output (stdout if omitted)");

  DumpArgs dm;
  auto* dmc = app.add_subcommand("dump-match", "Similarity matrix and optimal assignment as CSV");
  dmc->add_option("--checkpoint", dm.checkpoint);
  dmc->add_option("--data", dm.data);
  dmc->add_option("--index", dm.index, "Sample index in storage order")->capture_default_str();
  dmc->add_option("--pathway", dm.pathway, "fast or slow")->capture_default_str();
  dmc->add_option("--relations", dm.relations, "Rows of a seeded random fixture");
  dmc->add_option("--queries", dm.queries, "Columns of a seeded random fixture");
  dmc->add_option("--relation_cap", dm.relation_cap)->capture_default_str();
  dmc->add_option("--seed", dm.seed)->capture_default_str();
  dmc->add_option("--out", dm.out, "CSV output (stdout if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (*ex) return run_extract(extract);
  if (*gc) return run_group_clips(gc_input, gc_out);
  if (*ms) return run_make_synthetic(syn, syn_out, syn_shard_size);
  if (*sh) return run_shard(sh_input, sh_out, sh_size);
  if (*tn) return run_train(tr);
  if (*evc) {
    ev.pathway_mode = parse_pathway_mode(ev_mode);
    return run_eval(ev_ckpt, ev_data, ev, ev_out);
  }
  if (*tc) return run_trace(tr_ckpt, tr_data, tr_rel, tr_out);
  if (*dmc) return run_dump_match(dm);
  return 1;
}

}  // namespace
}  // namespace reveal::cli

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_st("reveal"));
  try {
    return reveal::cli::run(argc, argv);
  } catch (const reveal::ValidationError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
}
