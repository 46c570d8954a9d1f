#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include <sys/wait.h>

#include <json.hpp>

#include "geosense/errors.hpp"
#include "geosense/pipeline.hpp"
#include "support.hpp"

using namespace geosense;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"(# tiny run
seed=3
model.d_model=16
model.layers=1
model.heads=2
model.max_len=48
data.train_total=60
data.eval_per_kind=4
align.epochs=1
percept.epochs=1
)";

int run_cli(const std::string& args) {
  const auto cmd = std::string(GEOSENSE_CLI) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::vector<Scene> eval_scenes(const WorldConfig& w, int per_kind) {
  std::vector<Scene> out;
  for (auto k : kAllTaskKinds)
    for (const auto& s : geosense::testing::scenes_of(k, per_kind, 900, w)) out.push_back(s);
  return out;
}

std::string patch_line(std::string bytes, const std::string& from, const std::string& to) {
  const auto at = bytes.find(from);
  if (at != std::string::npos) bytes.replace(at, from.size(), to);
  return bytes;
}

}  // namespace

TEST(Config, ParsesKeysAndComments) {
  const auto c = parse_config_text(kTinyConfig);
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.model.backbone.d_model, 16);
  EXPECT_EQ(c.train_total, 60);
  EXPECT_EQ(c.align.epochs, 1);
  EXPECT_EQ(parse_config_text(c.to_text()).to_text(), c.to_text());
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_config_text("model.depth=3\n"), ConfigError);
  EXPECT_THROW(parse_config_text("seed\n"), ConfigError);
  EXPECT_THROW(parse_config_text("seed=abc\n"), ConfigError);
  EXPECT_THROW(parse_config_text("data.harmful_share=1.5\n"), ConfigError);
  EXPECT_THROW(parse_config_text("model.heads=3\n"), ConfigError);
}

TEST(Config, ReferenceFileLoads) {
  const auto c = load_config(GEOSENSE_REFERENCE_CONFIG);
  EXPECT_EQ(c.model.backbone.d_model, 64);
  EXPECT_NO_THROW(c.validate());
}

TEST(Checkpoint, RoundTripPreservesEveryTensor) {
  const auto dir = geosense::testing::scratch_dir("ckpt_roundtrip");
  auto cfg = geosense::testing::tiny_model_config();
  Model m(cfg);
  // Move away from initialization so the round trip is not trivially seeded.
  for (auto* t : m.trainable())
    for (auto& x : t->data()) x += 0.01f;
  save_checkpoint(m, {5, "percept", "adaptive"}, dir / "m.ckpt");
  const auto loaded = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(tensor_digests(loaded.model), tensor_digests(m));
  EXPECT_EQ(loaded.meta.seed, 5u);
  EXPECT_EQ(loaded.meta.stage, "percept");
  EXPECT_EQ(loaded.meta.variant, "adaptive");

  const auto scenes = eval_scenes(cfg.world, 3);
  EXPECT_EQ(metrics_to_json(evaluate(m, scenes, Policy::Adaptive).metrics),
            metrics_to_json(evaluate(loaded.model, scenes, Policy::Adaptive).metrics));

  const auto keys = tensor_digests(m);
  for (const char* k : {"encoder.vision", "encoder.geometry", "proj.2d", "proj.3d"}) EXPECT_TRUE(keys.count(k)) << k;
}

TEST(Checkpoint, DamagedFilesAreRejected) {
  const auto dir = geosense::testing::scratch_dir("ckpt_damage");
  Model m(geosense::testing::tiny_model_config());
  save_checkpoint(m, {1, "align", "adaptive"}, dir / "m.ckpt");
  const auto bytes = read_text_file(dir / "m.ckpt");

  write_text_file(dir / "trunc.ckpt", bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(load_checkpoint(dir / "trunc.ckpt"), CorruptionError);
  write_text_file(dir / "head.ckpt", bytes.substr(0, 20));
  EXPECT_THROW(load_checkpoint(dir / "head.ckpt"), CorruptionError);

  write_text_file(dir / "magic.ckpt", "NOTACKPT" + bytes.substr(8));
  EXPECT_THROW(load_checkpoint(dir / "magic.ckpt"), FormatError);

  write_text_file(dir / "version.ckpt", patch_line(bytes, "version 1\n", "version 9\n"));
  EXPECT_THROW(load_checkpoint(dir / "version.ckpt"), VersionError);

  auto flipped = bytes;
  flipped[flipped.size() - 3] = static_cast<char>(flipped[flipped.size() - 3] ^ 0x40);
  write_text_file(dir / "flip.ckpt", flipped);
  EXPECT_THROW(load_checkpoint(dir / "flip.ckpt"), CorruptionError);
}

TEST(Metrics, OverallIsCountWeightedMean) {
  const Model m(geosense::testing::tiny_model_config());
  std::vector<Scene> scenes;
  const int counts[] = {3, 5, 7};
  for (std::size_t k = 0; k < 3; ++k)
    for (const auto& s : geosense::testing::scenes_of(kAllTaskKinds[k], counts[k], 300)) scenes.push_back(s);
  const auto r = evaluate(m, scenes, Policy::AlwaysIndependent);
  const auto& mt = r.metrics;
  std::size_t correct = 0, n = 0, tokens = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(mt.per_kind[k].count, static_cast<std::size_t>(counts[k]));
    correct += mt.per_kind[k].correct;
    n += mt.per_kind[k].count;
    tokens += mt.per_kind[k].tokens;
    EXPECT_GE(mt.per_kind[k].accuracy, 0.0);
    EXPECT_LE(mt.per_kind[k].accuracy, 1.0);
  }
  EXPECT_EQ(mt.overall.count, n);
  EXPECT_EQ(mt.overall.correct, correct);
  EXPECT_EQ(mt.overall.tokens, tokens);
  EXPECT_DOUBLE_EQ(mt.overall.accuracy, static_cast<double>(correct) / static_cast<double>(n));
  EXPECT_DOUBLE_EQ(mt.overall.activation_rate, 1.0);
  EXPECT_THROW(evaluate(m, {}, Policy::Adaptive), ContractError);
  EXPECT_THROW(compute_metrics({}), ContractError);
}

TEST(Metrics, RescoringSavedTracesReproducesMetrics) {
  const auto dir = geosense::testing::scratch_dir("traces");
  const Model m(geosense::testing::tiny_model_config());
  const auto r = evaluate(m, eval_scenes(m.config().world, 4), Policy::Adaptive);
  save_traces(dir / "t.jsonl", r.traces);
  EXPECT_EQ(metrics_to_json(compute_metrics(load_traces(dir / "t.jsonl"))), metrics_to_json(r.metrics));
}

TEST(NoiseControl, FeaturesAreSeededAndUnitScale) {
  const WorldConfig w;
  const auto a = noise_features(w, 99, 5);
  const auto b = noise_features(w, 99, 5);
  const auto c = noise_features(w, 99, 6);
  ASSERT_EQ(a.shape(), (Shape{static_cast<std::size_t>(w.vision_tokens()), static_cast<std::size_t>(w.vision_dim)}));
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  EXPECT_FALSE(std::equal(a.data().begin(), a.data().end(), c.data().begin()));
  double sq = 0;
  for (auto x : a.data()) sq += static_cast<double>(x) * x;
  EXPECT_NEAR(sq / static_cast<double>(a.data().size()), 1.0, 0.5);
}

TEST(Report, MergesArtifactsByStem) {
  const auto dir = geosense::testing::scratch_dir("report");
  write_text_file(dir / "alpha.json", R"({"x": 1})");
  write_text_file(dir / "beta.json", R"([2, 3])");
  const auto j = nlohmann::json::parse(build_report({dir / "alpha.json", dir / "beta.json"}));
  EXPECT_EQ(j["alpha"]["x"], 1);
  EXPECT_EQ(j["beta"][1], 3);
  write_text_file(dir / "bad.json", "not json");
  EXPECT_THROW(build_report({dir / "bad.json"}), FormatError);
}

TEST(Cli, UsageErrorsExitWithTwo) {
  const auto dir = geosense::testing::scratch_dir("cli_usage");
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("eval --data x.jsonl --out " + (dir / "m.json").string()), 2);
  EXPECT_EQ(run_cli("eval --data x --checkpoint y --policy SOMETIMES --out " + (dir / "m.json").string()), 2);
}

TEST(Cli, RuntimeFailureExitsWithOne) {
  const auto dir = geosense::testing::scratch_dir("cli_runtime");
  write_text_file(dir / "bad.cfg", "nonsense.key=1\n");
  EXPECT_EQ(run_cli("gen-data --config " + (dir / "bad.cfg").string() + " --out " + (dir / "b.jsonl").string()), 1);
}

TEST(Cli, GenDataIsByteIdentical) {
  const auto dir = geosense::testing::scratch_dir("cli_gen");
  write_text_file(dir / "tiny.cfg", kTinyConfig);
  const auto cfg = (dir / "tiny.cfg").string();
  ASSERT_EQ(run_cli("gen-data --config " + cfg + " --out " + (dir / "a.jsonl").string()), 0);
  ASSERT_EQ(run_cli("gen-data --config " + cfg + " --out " + (dir / "b.jsonl").string()), 0);
  const auto a = read_text_file(dir / "a.jsonl");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, read_text_file(dir / "b.jsonl"));
  ASSERT_EQ(run_cli("gen-data --config " + cfg + " --seed 4 --out " + (dir / "c.jsonl").string()), 0);
  EXPECT_NE(a, read_text_file(dir / "c.jsonl"));
}

TEST(Pipeline, EmptyCuratedSetStillCompletes) {
  // An untrained tiny model fails every scene both ways, so nothing is curated
  // and stage 2 takes no steps.
  const auto dir = geosense::testing::scratch_dir("pipeline_empty");
  const auto p = run_pipeline(parse_config_text(kTinyConfig), dir);
  EXPECT_TRUE(read_text_file(p.curated()).empty());
  EXPECT_TRUE(fs::exists(p.report()));
}
