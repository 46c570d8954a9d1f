#include "geosense/pipeline.hpp"

#include <chrono>
#include <ostream>

#include "geosense/errors.hpp"

namespace geosense {

namespace {

std::vector<Scene> eval_scenes(const fs::path& data) {
  auto s = filter_scenes(load_scenes(data), Split::Eval);
  if (s.empty()) throw ContractError(data.string() + " holds no eval scenes");
  return s;
}

fs::path sibling(const fs::path& p, const std::string& suffix) { return fs::path(p.string() + suffix); }

TrainResult train_and_save(Model& model, const std::vector<DialogueSample>& samples, TrainConfig tc,
                           const std::string& stage, Variant variant, std::uint64_t seed,
                           const fs::path& out) {
  const auto snap = snapshot_encoders(model);
  auto result = tc.stage == Stage::Align ? stage1_align(model, samples, tc) : stage2_percept(model, samples, tc);
  if (!freeze_check(model, snap)) throw ContractError("encoder weights changed during training");
  save_checkpoint(model, {seed, stage, to_string(variant)}, out);
  save_loss_curve(sibling(out, ".loss.txt"), result.curve);
  return result;
}

}  // namespace

void step_gen_data(const PipelineConfig& cfg, const fs::path& out) {
  save_scenes(out, make_benchmark(cfg.benchmark(), cfg.model.world));
}

TrainResult step_train_align(const PipelineConfig& cfg, const fs::path& data, Variant variant,
                             const fs::path& out) {
  const auto pools = split_train_pools(load_scenes(data), cfg.align_share);
  Model model(cfg.model);
  auto tc = cfg.align;
  tc.seed = cfg.seed;
  return train_and_save(model, make_align_samples(pools.align, cfg.model.world, variant), tc, "align",
                        variant, cfg.seed, out);
}

CuratedSet step_curate(const PipelineConfig& cfg, const fs::path& data, const fs::path& checkpoint,
                       const fs::path& out) {
  const auto pools = split_train_pools(load_scenes(data), cfg.align_share);
  const auto ckpt = load_checkpoint(checkpoint);
  const auto records = dual_condition_infer(ckpt.model, pools.perception);
  auto mix = cfg.mix;
  mix.seed = cfg.seed;
  auto set = build_perception_set(records, cfg.model.world, mix);
  check_curated_invariants(set);
  save_curated(out, set);
  write_text_file(sibling(out, ".quadrants.json"), quadrant_report_json(quadrant_stats(records), set));
  std::string lines;
  for (const auto& r : records) lines += record_to_json_line(r) + "\n";
  write_text_file(sibling(out, ".records.jsonl"), lines);
  return set;
}

TrainResult step_train_percept(const PipelineConfig& cfg, const fs::path& data,
                               const fs::path& checkpoint, const fs::path& curated, Variant variant,
                               const fs::path& out) {
  const auto scenes = load_scenes(data);
  auto ckpt = load_checkpoint(checkpoint);
  if (!ckpt.meta.variant.empty() && ckpt.meta.variant != to_string(variant)) {
    throw UsageError("checkpoint was trained as variant '" + ckpt.meta.variant + "', not '" +
                     to_string(variant) + "'");
  }
  const auto samples = to_variant(load_curated(curated, scenes), cfg.model.world, variant);
  auto tc = cfg.percept;
  tc.seed = cfg.seed + 1;
  return train_and_save(ckpt.model, samples, tc, "percept", variant, cfg.seed, out);
}

Metrics step_eval(const PipelineConfig& cfg, const fs::path& data, const fs::path& checkpoint,
                  Policy policy, const fs::path& out, const fs::path& traces) {
  const auto ckpt = load_checkpoint(checkpoint);
  const auto r = evaluate(ckpt.model, eval_scenes(data), policy, cfg.inference());
  write_text_file(out, metrics_to_json(r.metrics));
  if (!traces.empty()) save_traces(traces, r.traces);
  return r.metrics;
}

std::vector<AblationRow> step_ablate(const PipelineConfig& cfg, const fs::path& data,
                                     const fs::path& adaptive, const fs::path& fusion,
                                     const fs::path& never, const fs::path& out) {
  const auto a = load_checkpoint(adaptive);
  const auto f = load_checkpoint(fusion);
  const auto n = load_checkpoint(never);
  auto rows = ablation_injection(a.model, f.model, n.model, eval_scenes(data), cfg.inference());
  write_text_file(out, ablation_to_json(rows));
  return rows;
}

TriggerStudy step_study_trigger(const PipelineConfig& cfg, const fs::path& data,
                                const fs::path& aligned, const fs::path& percept, const fs::path& out) {
  const Model initial(cfg.model);
  const auto a = load_checkpoint(aligned);
  const auto p = load_checkpoint(percept);
  auto study = trigger_confidence_study(initial, a.model, p.model, eval_scenes(data));
  write_text_file(out, trigger_study_to_json(study));
  return study;
}

NoiseControl step_noise_control(const PipelineConfig& cfg, const fs::path& data,
                                const fs::path& checkpoint, const fs::path& out) {
  const auto ckpt = load_checkpoint(checkpoint);
  const auto scenes = filter_scenes(eval_scenes(data), Split::Eval, TaskKind::GeoRequired);
  auto n = noise_control(ckpt.model, scenes, cfg.noise_seed);
  write_text_file(out, noise_control_to_json(n));
  return n;
}

void step_report(const std::vector<fs::path>& inputs, const fs::path& out) {
  if (inputs.empty()) throw UsageError("report needs at least one --in artifact");
  write_text_file(out, build_report(inputs));
}

namespace {

std::string loss_summary(const TrainResult& r) {
  if (r.curve.empty()) return "no steps";
  return "loss " + std::to_string(r.curve.front().loss) + " -> " + std::to_string(r.curve.back().loss);
}

}  // namespace

PipelinePaths run_pipeline(const PipelineConfig& cfg, const fs::path& dir, std::ostream* log) {
  fs::create_directories(dir);
  PipelinePaths p{dir};
  const auto t0 = std::chrono::steady_clock::now();
  auto note = [&](const std::string& what) {
    if (!log) return;
    const auto s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    *log << "[" << static_cast<int>(s) << "s] " << what << std::endl;
  };

  step_gen_data(cfg, p.benchmark());
  note("benchmark written");
  constexpr Variant kVariants[] = {Variant::Adaptive, Variant::Fusion, Variant::Never};
  for (auto v : kVariants) {
    const auto r = step_train_align(cfg, p.benchmark(), v, p.align(v));
    note("align " + to_string(v) + ": " + loss_summary(r));
  }
  const auto set = step_curate(cfg, p.benchmark(), p.align(Variant::Adaptive), p.curated());
  note("curated " + std::to_string(set.samples.size()) + " samples (TT " + std::to_string(set.tt_kept) +
       ", TF " + std::to_string(set.tf_kept) + ", FT " + std::to_string(set.ft_kept) + ")");
  for (auto v : kVariants) {
    const auto r = step_train_percept(cfg, p.benchmark(), p.align(v), p.curated(), v, p.percept(v));
    note("percept " + to_string(v) + ": " + loss_summary(r));
  }
  step_eval(cfg, p.benchmark(), p.percept(Variant::Adaptive), Policy::Adaptive, p.metrics(), p.traces());
  note("eval done");
  step_ablate(cfg, p.benchmark(), p.percept(Variant::Adaptive), p.percept(Variant::Fusion),
              p.percept(Variant::Never), p.ablation());
  note("ablation done");
  step_study_trigger(cfg, p.benchmark(), p.align(Variant::Adaptive), p.percept(Variant::Adaptive),
                     p.trigger_study());
  step_noise_control(cfg, p.benchmark(), p.percept(Variant::Adaptive), p.noise_control());
  note("studies done");
  step_report({p.metrics(), p.ablation(), p.trigger_study(), p.noise_control(),
               sibling(p.curated(), ".quadrants.json")},
              p.report());
  note("report written");
  return p;
}

}  // namespace geosense
