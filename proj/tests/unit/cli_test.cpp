#include <gtest/gtest.h>

#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include "../oracles/brute_force_assignment.hpp"
#include "reveal/alignment.hpp"
#include "reveal/shards.hpp"
#include "test_support.hpp"

namespace reveal {
namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(REVEAL_CLI_PATH) + " " + args + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

const std::string kTinyModel =
    " --hidden 16 --heads 2 --encoder_layers 1 --decoder_layers 1 --num_queries 4"
    " --output_dim 8 --backend_dim 8";

std::string synthetic_args(const testing::TempDir& dir, const std::string& name) {
  return "make-synthetic --samples 40 --concepts 6 --rel_dim 8 --vis_dim 12 --max_relations 4"
         " --shard_size 16 --out " + (dir / name).string();
}

TEST(CliTest, ExitCodes) {
  testing::TempDir dir;
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("train --help"), 0);
  EXPECT_EQ(run_cli("frobnicate"), 1);
  EXPECT_EQ(run_cli("dump-match --relations 3 --queries 5 --bogus 1"), 1);
  // Validation failures exit 1, runtime failures exit 2.
  EXPECT_EQ(run_cli("dump-match --relations 6 --queries 5"), 1);
  EXPECT_EQ(run_cli("make-synthetic --vis_dim 4 --rel_dim 8 --out " + (dir / "x").string()), 1);
  EXPECT_EQ(run_cli("train --data " + (dir / "missing").string()), 2);
  EXPECT_EQ(run_cli("eval --checkpoint " + (dir / "none.ckpt").string() + " --data " +
                    (dir / "none").string()),
            2);
}

TEST(CliTest, MakeSyntheticIsByteReproducible) {
  testing::TempDir dir;
  ASSERT_EQ(run_cli(synthetic_args(dir, "a")), 0);
  ASSERT_EQ(run_cli(synthetic_args(dir, "b")), 0);
  const auto a = list_shards(dir / "a");
  const auto b = list_shards(dir / "b");
  ASSERT_EQ(a.size(), 3u);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(slurp(a[i]), slurp(b[i]));
  EXPECT_EQ(read_all_samples(dir / "a").size(), 40u);
}

TEST(CliTest, DumpMatchFixtureAgreesWithExhaustiveSearch) {
  testing::TempDir dir;
  const auto out = dir / "match.csv";
  ASSERT_EQ(run_cli("dump-match --relations 3 --queries 5 --seed 7 --out " + out.string()), 0);
  std::istringstream lines(slurp(out));
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "relation,query,similarity,matched");
  Matrix s(3, 5);
  std::vector<int> sigma(3, -1);
  int rows = 0;
  while (std::getline(lines, line)) {
    int j, m, matched;
    double v;
    ASSERT_EQ(std::sscanf(line.c_str(), "%d,%d,%lf,%d", &j, &m, &v, &matched), 4);
    s(j, m) = v;
    if (matched) sigma[static_cast<std::size_t>(j)] = m;
    ++rows;
  }
  EXPECT_EQ(rows, 15);
  EXPECT_TRUE(s == random_similarity(3, 5, 7));
  EXPECT_EQ(sigma, oracle::brute_force_assignment(s).optimal.front());
}

TEST(CliTest, TrainEvalTraceDumpMatchEndToEnd) {
  testing::TempDir dir;
  ASSERT_EQ(run_cli(synthetic_args(dir, "data")), 0);
  write(dir / "train.cfg", "batch_size = 4\ngrad_accum_steps = 2\nmax_steps = 3\nrelation_cap = 4\n");
  const std::string data = (dir / "data").string();
  ASSERT_EQ(run_cli("train --data " + data + " --config " + (dir / "train.cfg").string() +
                    " --max_steps 2 --out " + (dir / "ckpt").string() + " --metrics " +
                    (dir / "metrics.jsonl").string() + kTinyModel),
            0);
  std::istringstream metrics(slurp(dir / "metrics.jsonl"));
  std::string line;
  int count = 0;
  while (std::getline(metrics, line)) {
    EXPECT_TRUE(nlohmann::json::parse(line).contains("loss"));
    ++count;
  }
  EXPECT_EQ(count, 2);  // the flag overrides the file
  const std::string ckpt = (dir / "ckpt/final.ckpt").string();
  ASSERT_TRUE(std::filesystem::exists(ckpt));

  ASSERT_EQ(run_cli("eval --checkpoint " + ckpt + " --data " + data +
                    " --relation_cap 4 --out " + (dir / "eval.json").string()),
            0);
  const auto report = nlohmann::json::parse(slurp(dir / "eval.json"));
  EXPECT_GE(report["recall_at_1"].get<double>(), 0.0);
  EXPECT_LE(report["recall_at_1"].get<double>(), report["recall_at_5"].get<double>());
  EXPECT_EQ(report["samples"], 40);

  write(dir / "rels.txt", "Subject: man, Predicate: holding, Object: cup\nSubject: dog, Predicate: running\n");
  ASSERT_EQ(run_cli("trace --checkpoint " + ckpt + " --data " + data + " --relations " +
                    (dir / "rels.txt").string() + " --out " + (dir / "trace.csv").string()),
            0);
  std::istringstream trace(slurp(dir / "trace.csv"));
  std::getline(trace, line);
  EXPECT_EQ(line.rfind("relation,segment_0,", 0), 0u);
  EXPECT_NE(line.find("segment_39"), std::string::npos);

  ASSERT_EQ(run_cli("dump-match --checkpoint " + ckpt + " --data " + data +
                    " --index 3 --pathway slow --relation_cap 4 --out " + (dir / "m.csv").string()),
            0);
  EXPECT_EQ(slurp(dir / "m.csv").rfind("relation,query,similarity,matched\n", 0), 0u);
  EXPECT_EQ(run_cli("dump-match --checkpoint " + ckpt + " --data " + data + " --index 400"), 1);

  EXPECT_EQ(run_cli("train --data " + data + " --init_checkpoint " + ckpt + " --hidden 8"), 1);
  EXPECT_EQ(run_cli("train --data " + data + " --init_checkpoint " + ckpt +
                    " --batch_size 4 --grad_accum_steps 1 --max_steps 1 --relation_cap 4 --metrics " +
                    (dir / "m2.jsonl").string()),
            0);
}

TEST(CliTest, ShardPacksJsonLines) {
  testing::TempDir dir;
  write(dir / "samples.jsonl",
        R"({"video_id": "a", "fast_tokens": [[1, 2], [3, 4]], "slow_tokens": [[5, 6]], "triplets": [{"subject": "man", "predicate": "walking", "object": null}]})"
        "\n"
        R"({"video_id": "b", "fast_tokens": [[1, 0]], "slow_tokens": [[0, 1]], "triplets": [{"subject": "cat", "predicate": "on", "object": "mat"}]})"
        "\n");
  ASSERT_EQ(run_cli("shard --input " + (dir / "samples.jsonl").string() + " --out " +
                    (dir / "out").string()),
            0);
  const auto samples = read_all_samples(dir / "out");
  ASSERT_EQ(samples.size(), 2u);
  EXPECT_EQ(samples[0].video_id, "a");
  EXPECT_EQ(samples[0].fast_tokens(1, 0), 3.0);
  EXPECT_FALSE(samples[0].relations.triplets()[0].object().has_value());
  EXPECT_EQ(*samples[1].relations.triplets()[0].object(), "mat");
}

TEST(CliTest, ExtractWithCannedResponses) {
  testing::TempDir dir;
  write(dir / "captions.txt", "Iguana on a tree hd\nunknown caption\n");
  write(dir / "responses.json",
        R"({"Iguana on a tree hd": "• Subject: iguana, Predicate: on, Object: tree"})");
  ASSERT_EQ(run_cli("extract --captions " + (dir / "captions.txt").string() + " --responses " +
                    (dir / "responses.json").string() + " --out " + (dir / "t.jsonl").string()),
            0);
  std::istringstream lines(slurp(dir / "t.jsonl"));
  std::string line;
  std::getline(lines, line);
  const auto first = nlohmann::json::parse(line);
  EXPECT_EQ(first["caption"], "Iguana on a tree hd");
  ASSERT_EQ(first["triplets"].size(), 1u);
  EXPECT_EQ(first["triplets"][0]["subject"], "iguana");
  EXPECT_EQ(first["triplets"][0]["object"], "tree");
  std::getline(lines, line);
  EXPECT_TRUE(nlohmann::json::parse(line).contains("error"));
}

TEST(CliTest, GroupClipsHandExample) {
  testing::TempDir dir;
  write(dir / "rel.jsonl",
        R"({"subject": "a", "predicate": "p", "object": null, "start": 0, "end": 10})" "\n"
        R"({"subject": "b", "predicate": "p", "object": null, "start": 12, "end": 20})" "\n"
        R"({"subject": "c", "predicate": "p", "object": null, "start": 100, "end": 110})" "\n"
        R"({"subject": "d", "predicate": "p", "object": null, "start": 105, "end": 120})" "\n");
  ASSERT_EQ(run_cli("group-clips --input " + (dir / "rel.jsonl").string() + " --out " +
                    (dir / "clips.json").string()),
            0);
  const auto clips = nlohmann::json::parse(slurp(dir / "clips.json"));
  ASSERT_EQ(clips.size(), 2u);
  EXPECT_EQ(clips[0]["start_frame"], 0);
  EXPECT_EQ(clips[0]["end_frame"], 20);
  EXPECT_EQ(clips[1]["start_frame"], 100);
  EXPECT_EQ(clips[1]["end_frame"], 120);
  EXPECT_EQ(clips[1]["relations"].size(), 2u);
}

}  // namespace
}  // namespace reveal
