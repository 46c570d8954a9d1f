#pragma once

// Pipeline configuration, checkpoints, metrics and the experiment drivers
// behind the command-line tool.

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "geosense/curation.hpp"
#include "geosense/inference.hpp"
#include "geosense/training.hpp"

namespace geosense {

// Flat key=value configuration. Unknown keys are rejected.
struct PipelineConfig {
  std::uint64_t seed = 1;
  ModelConfig model;

  int train_total = 2000;
  int eval_per_kind = 100;
  double harmful_share = 0.15;
  double align_share = 0.5;

  TrainConfig align{Stage::Align, {}, 8, 3, 1, true};
  TrainConfig percept{Stage::Percept, {}, 24, 3, 1, true};
  MixConfig mix;

  int max_new_pass1 = 4;
  int max_new_pass2 = 3;
  std::uint64_t noise_seed = 99;

  void set(const std::string& key, const std::string& value);
  void validate() const;
  // Canonical key=value text, one per line, sorted by key.
  std::string to_text() const;
  std::map<std::string, std::string> to_map() const;

  BenchmarkConfig benchmark() const;
  InferenceOptions inference() const;
};

PipelineConfig parse_config_text(const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path);

// Train split partitioned per task kind: the first align_share of each kind
// feeds stage 1, the rest is the pool curated for stage 2.
struct TrainPools {
  std::vector<Scene> align;
  std::vector<Scene> perception;
};
TrainPools split_train_pools(const std::vector<Scene>& scenes, double align_share);

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr const char* kCheckpointMagic = "GEOSENSE-CKPT";
inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::string stage;    // free-form provenance, e.g. "align"
  std::string variant;  // adaptive | fusion | never
};

void save_checkpoint(const Model& model, const CheckpointMeta& meta, const std::filesystem::path& path);

struct LoadedCheckpoint {
  Model model;
  CheckpointMeta meta;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// name → digest for every tensor of the model.
std::map<std::string, std::uint64_t> tensor_digests(const Model& model);

// ---------------------------------------------------------------------------
// Metrics

struct KindMetrics {
  std::size_t count = 0;
  std::size_t correct = 0;
  std::size_t triggered = 0;
  double accuracy = 0.0;
  double activation_rate = 0.0;
  double mean_trigger_conf = 0.0;
  double mean_trigger_conf_first = 0.0;
  std::size_t tokens = 0;
};

struct Metrics {
  Policy policy = Policy::Adaptive;
  std::array<KindMetrics, 3> per_kind{};  // indexed like kAllTaskKinds
  KindMetrics overall;

  const KindMetrics& of(TaskKind k) const { return per_kind[static_cast<std::size_t>(k)]; }
};

Metrics compute_metrics(const std::vector<InferenceTrace>& traces);
std::string metrics_to_json(const Metrics& m);

struct EvalResult {
  Metrics metrics;
  std::vector<InferenceTrace> traces;
};

EvalResult evaluate(const Model& model, const std::vector<Scene>& scenes, Policy policy,
                    const InferenceOptions& opts = {});

void save_traces(const std::filesystem::path& path, const std::vector<InferenceTrace>& traces);
std::vector<InferenceTrace> load_traces(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Experiments

struct AblationRow {
  Policy policy;
  std::string model_variant;
  Metrics metrics;
};

// NEVER is answered by the never-geometry model, RIGID_FUSION by the fusion
// model, ALWAYS_INDEPENDENT and ADAPTIVE by the adaptive model.
std::vector<AblationRow> ablation_injection(const Model& adaptive, const Model& fusion,
                                            const Model& never, const std::vector<Scene>& scenes,
                                            const InferenceOptions& opts = {});
std::string ablation_to_json(const std::vector<AblationRow>& rows);

struct ConfidenceSummary {
  std::array<double, 3> path{};   // mean per task kind
  std::array<double, 3> first{};  // mean per task kind
  std::array<std::size_t, 3> count{};
};

// Readout at the pass-1 decision position for every scene.
ConfidenceSummary trigger_confidence_summary(const Model& model, const std::vector<Scene>& scenes,
                                             const InferenceOptions& opts = {});

struct TriggerStudy {
  ConfidenceSummary initial, aligned, percept;
};
TriggerStudy trigger_confidence_study(const Model& initial, const Model& aligned, const Model& percept,
                                      const std::vector<Scene>& scenes);
std::string trigger_study_to_json(const TriggerStudy& s);

struct NoiseControl {
  std::size_t scenes = 0;
  double mean_real = 0.0;
  double mean_noise = 0.0;
  double mean_real_first = 0.0;
  double mean_noise_first = 0.0;
};

// Seeded unit-variance replacement for the vision encoder output.
Tensor<float> noise_features(const WorldConfig& world, std::uint64_t noise_seed, std::uint64_t scene_seed);

NoiseControl noise_control(const Model& model, const std::vector<Scene>& scenes, std::uint64_t noise_seed);
std::string noise_control_to_json(const NoiseControl& n);

// Merges JSON artifacts into one document keyed by file stem.
std::string build_report(const std::vector<std::filesystem::path>& artifacts);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace geosense
