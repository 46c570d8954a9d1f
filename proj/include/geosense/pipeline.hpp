#pragma once

// File-to-file pipeline steps. Each CLI subcommand is one of these; run_pipeline
// chains them into a working directory.

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "geosense/harness.hpp"

namespace geosense {

namespace fs = std::filesystem;

void step_gen_data(const PipelineConfig& cfg, const fs::path& out);
// Writes the checkpoint and a loss curve next to it (<out>.loss.txt).
TrainResult step_train_align(const PipelineConfig& cfg, const fs::path& data, Variant variant,
                             const fs::path& out);
// Writes the curated set, <out>.quadrants.json and <out>.records.jsonl.
CuratedSet step_curate(const PipelineConfig& cfg, const fs::path& data, const fs::path& checkpoint,
                       const fs::path& out);
TrainResult step_train_percept(const PipelineConfig& cfg, const fs::path& data,
                               const fs::path& checkpoint, const fs::path& curated, Variant variant,
                               const fs::path& out);
// Writes Metrics JSON; traces too when `traces` is non-empty.
Metrics step_eval(const PipelineConfig& cfg, const fs::path& data, const fs::path& checkpoint,
                  Policy policy, const fs::path& out, const fs::path& traces = {});
std::vector<AblationRow> step_ablate(const PipelineConfig& cfg, const fs::path& data,
                                     const fs::path& adaptive, const fs::path& fusion,
                                     const fs::path& never, const fs::path& out);
TriggerStudy step_study_trigger(const PipelineConfig& cfg, const fs::path& data,
                                const fs::path& aligned, const fs::path& percept, const fs::path& out);
NoiseControl step_noise_control(const PipelineConfig& cfg, const fs::path& data,
                                const fs::path& checkpoint, const fs::path& out);
void step_report(const std::vector<fs::path>& inputs, const fs::path& out);

struct PipelinePaths {
  fs::path dir;
  fs::path benchmark() const { return dir / "benchmark.jsonl"; }
  fs::path align(Variant v) const { return dir / ("align_" + to_string(v) + ".ckpt"); }
  fs::path percept(Variant v) const { return dir / ("percept_" + to_string(v) + ".ckpt"); }
  fs::path curated() const { return dir / "curated.jsonl"; }
  fs::path metrics() const { return dir / "metrics.json"; }
  fs::path traces() const { return dir / "traces.jsonl"; }
  fs::path ablation() const { return dir / "ablation.json"; }
  fs::path trigger_study() const { return dir / "trigger_study.json"; }
  fs::path noise_control() const { return dir / "noise_control.json"; }
  fs::path report() const { return dir / "report.json"; }
};

// Full run: data, three model variants through both stages, evaluation and
// every study. Progress lines go to `log` when given.
PipelinePaths run_pipeline(const PipelineConfig& cfg, const fs::path& dir, std::ostream* log = nullptr);

}  // namespace geosense
