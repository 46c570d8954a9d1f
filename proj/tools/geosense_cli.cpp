// geosense: command-line entry point for the desk-scale pipeline.
//
//   geosense gen-data      --config c.cfg --out bench.jsonl
//   geosense train-align   --config c.cfg --data bench.jsonl --variant adaptive --out align.ckpt
//   geosense curate        --config c.cfg --data bench.jsonl --checkpoint align.ckpt --out curated.jsonl
//   geosense train-percept --config c.cfg --data bench.jsonl --checkpoint align.ckpt
//                          --curated curated.jsonl --variant adaptive --out percept.ckpt
//   geosense eval          --config c.cfg --data bench.jsonl --checkpoint percept.ckpt --out metrics.json
//   geosense ablate        --data ... --adaptive a.ckpt --fusion f.ckpt --never n.ckpt --out ablation.json
//   geosense study-trigger --data ... --aligned a.ckpt --percept p.ckpt --out study.json
//   geosense noise-control --data ... --checkpoint p.ckpt --out noise.json
//   geosense report        --in metrics.json --in ablation.json ... --out report.json
//   geosense pipeline      --config c.cfg --out rundir
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "geosense/errors.hpp"
#include "geosense/pipeline.hpp"

using namespace geosense;

namespace {

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Override the config seed");
  sub->add_option("--config", c.config, "key=value config file (defaults apply when omitted)");
  sub->add_option("--out", c.out, "Output path")->required();
}

PipelineConfig resolve(const Common& c) {
  PipelineConfig cfg = c.config.empty() ? PipelineConfig{} : load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale adaptive geometry-channel pipeline"};
  app.require_subcommand(1);

  Common common;
  std::string data, checkpoint, curated, variant = "adaptive", policy = "ADAPTIVE", traces;
  std::string adaptive, fusion, never, aligned, percept;
  std::vector<std::string> inputs;

  auto* gen = app.add_subcommand("gen-data", "Generate the seeded benchmark");
  add_common(gen, common);

  auto* align = app.add_subcommand("train-align", "Stage 1: geometric feature alignment");
  add_common(align, common);
  align->add_option("--data", data)->required();
  align->add_option("--variant", variant, "adaptive | fusion | never");

  auto* curate = app.add_subcommand("curate", "Dual-condition inference and quadrant curation");
  add_common(curate, common);
  curate->add_option("--data", data)->required();
  curate->add_option("--checkpoint", checkpoint)->required();

  auto* perc = app.add_subcommand("train-percept", "Stage 2: perception tuning on curated data");
  add_common(perc, common);
  perc->add_option("--data", data)->required();
  perc->add_option("--checkpoint", checkpoint)->required();
  perc->add_option("--curated", curated)->required();
  perc->add_option("--variant", variant, "adaptive | fusion | never");

  auto* ev = app.add_subcommand("eval", "Evaluate one policy on the eval split");
  add_common(ev, common);
  ev->add_option("--data", data)->required();
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--policy", policy, "ADAPTIVE | NEVER | RIGID_FUSION | ALWAYS_INDEPENDENT");
  ev->add_option("--traces", traces, "Also write per-scene traces");

  auto* abl = app.add_subcommand("ablate", "Injection-scheme ablation");
  add_common(abl, common);
  abl->add_option("--data", data)->required();
  abl->add_option("--adaptive", adaptive)->required();
  abl->add_option("--fusion", fusion)->required();
  abl->add_option("--never", never)->required();

  auto* study = app.add_subcommand("study-trigger", "Trigger confidence across the stage ladder");
  add_common(study, common);
  study->add_option("--data", data)->required();
  study->add_option("--aligned", aligned)->required();
  study->add_option("--percept", percept)->required();

  auto* noise = app.add_subcommand("noise-control", "Trigger confidence with noise vision features");
  add_common(noise, common);
  noise->add_option("--data", data)->required();
  noise->add_option("--checkpoint", checkpoint)->required();

  auto* report = app.add_subcommand("report", "Merge JSON artifacts into one summary");
  add_common(report, common);
  report->add_option("--in", inputs, "Artifact to include (repeatable)")->required();

  auto* pipe = app.add_subcommand("pipeline", "Run every step into the --out directory");
  add_common(pipe, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  }

  try {
    const auto cfg = resolve(common);
    if (*gen) {
      step_gen_data(cfg, common.out);
    } else if (*align) {
      const auto r = step_train_align(cfg, data, parse_variant(variant), common.out);
      std::cout << "align steps " << r.steps << "\n";
    } else if (*curate) {
      const auto set = step_curate(cfg, data, checkpoint, common.out);
      std::cout << "curated " << set.samples.size() << " samples\n";
      for (const auto& w : set.warnings) std::cerr << "warning: " << w << "\n";
    } else if (*perc) {
      const auto r = step_train_percept(cfg, data, checkpoint, curated, parse_variant(variant), common.out);
      std::cout << "percept steps " << r.steps << "\n";
    } else if (*ev) {
      Policy p;
      try {
        p = parse_policy(policy);
      } catch (const FormatError& e) {
        throw UsageError(e.what());
      }
      const auto m = step_eval(cfg, data, checkpoint, p, common.out, traces);
      std::cout << "overall accuracy " << m.overall.accuracy << "\n";
    } else if (*abl) {
      step_ablate(cfg, data, adaptive, fusion, never, common.out);
    } else if (*study) {
      step_study_trigger(cfg, data, aligned, percept, common.out);
    } else if (*noise) {
      step_noise_control(cfg, data, checkpoint, common.out);
    } else if (*report) {
      std::vector<fs::path> paths(inputs.begin(), inputs.end());
      step_report(paths, common.out);
    } else if (*pipe) {
      run_pipeline(cfg, common.out, &std::cout);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
