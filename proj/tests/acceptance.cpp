// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <sstream>

#include <sys/wait.h>

#include <json.hpp>

#include "geosense/gradcheck.hpp"
#include "geosense/pipeline.hpp"
#include "grad_cases.hpp"
#include "quadrant_props.hpp"
#include "sequence_props.hpp"

using namespace geosense;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

const char* kTinyConfig = R"(seed=5
model.d_model=16
model.layers=1
model.heads=2
model.max_len=48
data.train_total=150
data.eval_per_kind=5
align.lr=0.003
align.epochs=6
percept.lr=0.003
percept.epochs=1
)";

fs::path work_dir() {
  auto p = fs::temp_directory_path() / "geosense_acceptance";
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// --- 1 ---------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string worst_case;
  std::size_t checks = 0;
  for (const auto& c : testing::gradient_cases()) {
    for (std::uint64_t s = 1; s <= 5; ++s) {
      const auto r = finite_diff_check(c.loss, c.inputs(s * 7919));
      ++checks;
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        worst_case = c.op + " seed " + std::to_string(s);
      }
    }
  }
  for (std::uint64_t s = 1; s <= 5; ++s) {
    testing::ModelLossCase mc(s);
    const auto r = finite_diff_check(mc.loss(), mc.params);
    ++checks;
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_case = "model loss seed " + std::to_string(s);
    }
  }
  const auto secs = seconds_since(t0);
  std::ostringstream d;
  d << checks << " checks, max rel error " << worst << " (" << worst_case << "), " << secs << " s";
  return {worst < 1e-4 && secs < 60.0, d.str()};
}

// --- 2 ---------------------------------------------------------------------

Outcome sequence_algebra() {
  std::size_t violations = 0;
  std::string first;
  for (std::uint64_t s = 1; s <= 1000; ++s) {
    const auto bad = testing::sequence_case_violations(s);
    violations += bad.size();
    if (!bad.empty() && first.empty()) first = "seed " + std::to_string(s) + ": " + bad.front();
  }
  return {violations == 0, "1000 cases, " + std::to_string(violations) + " violations" +
                               (first.empty() ? "" : " (" + first + ")")};
}

// --- 3 ---------------------------------------------------------------------

bool trainable_name(const std::string& n) { return n.rfind("backbone.", 0) == 0 || n.rfind("proj.", 0) == 0; }

Outcome freeze_contract(const PipelineConfig& cfg, const PipelinePaths& p) {
  const auto before = tensor_digests(Model(cfg.model));
  std::size_t changed = 0;
  for (auto v : {Variant::Adaptive, Variant::Fusion, Variant::Never}) {
    for (const auto& path : {p.align(v), p.percept(v)}) {
      const auto after = tensor_digests(load_checkpoint(path).model);
      if (after.size() != before.size()) return {false, path.filename().string() + ": tensor set differs"};
      for (const auto& [name, dig] : before) {
        const auto it = after.find(name);
        if (it == after.end()) return {false, path.filename().string() + " lacks " + name};
        if (it->second == dig) continue;
        if (!trainable_name(name)) return {false, name + " changed in " + path.filename().string()};
        ++changed;
      }
    }
  }
  return {changed > 0, "encoders identical in 6 checkpoints; " + std::to_string(changed) +
                           " trainable tensor changes, all within backbone/projectors"};
}

// --- 4 ---------------------------------------------------------------------

Outcome quadrant_oracle() {
  for (int w = 0; w < 2; ++w)
    for (int wo = 0; wo < 2; ++wo) {
      const auto q = classify_quadrant(w, wo);
      const auto expect = w ? (wo ? Quadrant::TT : Quadrant::TF) : (wo ? Quadrant::FT : Quadrant::FF);
      if (q != expect) return {false, "classify_quadrant disagrees with enumeration"};
    }
  std::size_t corpora = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto recs = testing::random_corpus(seed, 150);
    for (const auto& mix : {MixConfig{seed, -1, -1, -1}, MixConfig{seed, 10, 8, 6}}) {
      const auto bad = testing::curation_violations(recs, mix);
      if (!bad.empty()) return {false, "corpus " + std::to_string(seed) + ": " + bad.front()};
      ++corpora;
    }
  }
  return {true, "4 boolean pairs, " + std::to_string(corpora) + " curated sets from 10 corpora"};
}

// --- 5 to 7 ----------------------------------------------------------------

struct Acc {
  double overall = 0;
  std::array<double, 3> kind{};
  std::array<std::size_t, 3> count{}, correct{};
  std::array<double, 3> activation{};
};

std::map<std::string, Acc> read_ablation(const fs::path& path) {
  std::map<std::string, Acc> out;
  for (const auto& row : json::parse(read_text_file(path))) {
    Acc a;
    const auto& m = row["metrics"];
    a.overall = m["overall"]["accuracy"];
    for (auto k : kAllTaskKinds) {
      const auto i = static_cast<std::size_t>(k);
      a.kind[i] = m[to_string(k)]["accuracy"];
      a.count[i] = m[to_string(k)]["count"];
      a.correct[i] = m[to_string(k)]["correct"];
      a.activation[i] = m[to_string(k)]["activation_rate"];
    }
    out[row["policy"]] = a;
  }
  return out;
}

constexpr auto kReq = static_cast<std::size_t>(TaskKind::GeoRequired);
constexpr auto kHar = static_cast<std::size_t>(TaskKind::GeoHarmful);
constexpr auto kNeu = static_cast<std::size_t>(TaskKind::GeoNeutral);

Outcome central_claim(const PipelinePaths& p, double runtime) {
  auto rows = read_ablation(p.ablation());
  const auto& ad = rows.at("ADAPTIVE");
  const auto& nv = rows.at("NEVER");
  const auto& rf = rows.at("RIGID_FUSION");
  for (std::size_t k = 0; k < 3; ++k)
    if (ad.count[k] < 100) return {false, "fewer than 100 eval scenes for a task kind"};
  auto req_har = [](const Acc& a) {
    return static_cast<double>(a.correct[kReq] + a.correct[kHar]) / static_cast<double>(a.count[kReq] + a.count[kHar]);
  };
  const bool a = ad.overall >= std::max(nv.overall, rf.overall) - 0.01 && req_har(ad) > req_har(nv) &&
                 req_har(ad) > req_har(rf);
  const bool b = rf.kind[kHar] < nv.kind[kHar];
  const bool c = ad.kind[kReq] - nv.kind[kReq] >= 0.10;
  const bool t = runtime < 1800.0;
  std::ostringstream d;
  d << "(a) overall ADAPTIVE " << ad.overall << " NEVER " << nv.overall << " RIGID " << rf.overall
    << ", REQ+HAR " << req_har(ad) << "/" << req_har(nv) << "/" << req_har(rf) << (a ? " ok" : " FAIL")
    << "; (b) HARMFUL RIGID " << rf.kind[kHar] << " < NEVER " << nv.kind[kHar] << (b ? " ok" : " FAIL")
    << "; (c) REQUIRED ADAPTIVE " << ad.kind[kReq] << " - NEVER " << nv.kind[kReq] << (c ? " ok" : " FAIL")
    << "; runtime " << static_cast<int>(runtime) << " s" << (t ? "" : " FAIL");
  return {a && b && c && t, d.str()};
}

Outcome activation_ordering(const PipelinePaths& p) {
  const auto ad = read_ablation(p.ablation()).at("ADAPTIVE");
  const auto req = ad.activation[kReq];
  const auto neu = ad.activation[kNeu];
  std::ostringstream d;
  d << "REQUIRED " << req << ", NEUTRAL " << neu << ", HARMFUL " << ad.activation[kHar];
  return {req - neu >= 0.3 && neu < 0.15, d.str()};
}

Outcome confidence_ladder(const PipelinePaths& p) {
  const auto s = json::parse(read_text_file(p.trigger_study()));
  const auto n = json::parse(read_text_file(p.noise_control()));
  const auto req = to_string(TaskKind::GeoRequired);
  const double init = s["initial"][req]["path_conf"];
  const double aligned = s["aligned"][req]["path_conf"];
  const double percept = s["percept"][req]["path_conf"];
  const std::size_t count = s["percept"][req]["count"];
  const double real = n["mean_conf_real"];
  const double noise = n["mean_conf_noise"];
  const std::size_t noise_scenes = n["scenes"];
  std::ostringstream d;
  d << "initial " << init << ", aligned " << aligned << ", percept " << percept << " over " << count
    << " scenes; real " << real << " vs noise " << noise << " over " << noise_scenes;
  return {percept > aligned && percept > init && noise < real && count >= 100 && noise_scenes >= 100, d.str()};
}

// --- 8 ---------------------------------------------------------------------

Outcome purity_and_cost(const PipelinePaths& p) {
  const auto model = load_checkpoint(p.percept(Variant::Adaptive)).model;
  const auto scenes = filter_scenes(load_scenes(p.benchmark()), Split::Eval);
  std::size_t untriggered = 0;
  for (const auto& s : scenes) {
    model.reset_call_counts();
    const auto a = policy_infer(model, s, Policy::Adaptive);
    if (a.triggered) continue;
    ++untriggered;
    if (model.geometry_encoder_calls() != 0 || model.projector_3d_calls() != 0)
      return {false, "geometry path touched on untriggered scene " + std::to_string(s.seed)};
    const auto n = policy_infer(model, s, Policy::Never);
    if (a.total_tokens() != n.total_tokens())
      return {false, "token cost differs on scene " + std::to_string(s.seed)};
  }
  return {untriggered > 0, std::to_string(untriggered) + " untriggered of " + std::to_string(scenes.size()) +
                               " eval scenes: zero geometry calls, cost equal to NEVER"};
}

// --- 9 ---------------------------------------------------------------------

int run_cli(const std::string& args) {
  const auto cmd = std::string(GEOSENSE_CLI) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

Outcome determinism(const fs::path& root) {
  const auto cfg_path = root / "tiny.cfg";
  write_text_file(cfg_path, kTinyConfig);
  const fs::path a = root / "det_a", b = root / "det_b";
  for (const auto& d : {a, b})
    if (run_cli("pipeline --config " + cfg_path.string() + " --out " + d.string()) != 0)
      return {false, "CLI pipeline failed in " + d.string()};

  std::vector<std::string> files{"benchmark.jsonl", "curated.jsonl", "metrics.json"};
  for (const auto& e : fs::directory_iterator(a))
    if (e.path().extension() == ".ckpt") files.push_back(e.path().filename().string());
  std::sort(files.begin(), files.end());
  for (const auto& f : files)
    if (read_text_file(a / f) != read_text_file(b / f)) return {false, f + " differs between runs"};
  if (read_text_file(a / "curated.jsonl").empty()) return {false, "tiny run curated nothing; comparison is vacuous"};

  const auto cfg = parse_config_text(kTinyConfig);
  const auto loaded = load_checkpoint(a / "percept_adaptive.ckpt");
  save_checkpoint(loaded.model, loaded.meta, root / "resaved.ckpt");
  if (read_text_file(root / "resaved.ckpt") != read_text_file(a / "percept_adaptive.ckpt"))
    return {false, "checkpoint re-save is not byte-identical"};
  const auto again = load_checkpoint(root / "resaved.ckpt");
  const auto scenes = filter_scenes(load_scenes(a / "benchmark.jsonl"), Split::Eval);
  for (auto pol : kAllPolicies) {
    const auto x = evaluate(loaded.model, scenes, pol, cfg.inference());
    const auto y = evaluate(again.model, scenes, pol, cfg.inference());
    if (metrics_to_json(x.metrics) != metrics_to_json(y.metrics)) return {false, "metrics differ after round trip"};
    for (std::size_t i = 0; i < x.traces.size(); ++i)
      if (trace_to_json_line(x.traces[i]) != trace_to_json_line(y.traces[i]))
        return {false, "trace differs after round trip"};
  }
  return {true, std::to_string(files.size()) + " artifacts byte-identical across two CLI runs; round trip exact"};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " " << name << ": " << o.detail << std::endl;
  };

  report(1, "gradient correctness", gradient_correctness);
  report(2, "sequence algebra", sequence_algebra);
  report(4, "quadrant oracle", quadrant_oracle);

  const auto root = work_dir();
  const auto cfg = load_config(GEOSENSE_REFERENCE_CONFIG);
  PipelinePaths paths{root / "reference"};
  double runtime = 0;
  bool ran = false;
  std::string run_error;
  try {
    const auto t0 = Clock::now();
    paths = run_pipeline(cfg, paths.dir, &std::cout);
    runtime = seconds_since(t0);
    ran = true;
  } catch (const std::exception& e) {
    run_error = e.what();
  }
  auto needs_run = [&](std::function<Outcome()> fn) {
    return [&, fn]() -> Outcome {
      if (!ran) return {false, "reference pipeline failed: " + run_error};
      return fn();
    };
  };
  report(3, "freeze contract", needs_run([&] { return freeze_contract(cfg, paths); }));
  report(5, "central claim", needs_run([&] { return central_claim(paths, runtime); }));
  report(6, "activation-rate ordering", needs_run([&] { return activation_ordering(paths); }));
  report(7, "trigger-confidence ladder", needs_run([&] { return confidence_ladder(paths); }));
  report(8, "purity and cost", needs_run([&] { return purity_and_cost(paths); }));
  report(9, "determinism and persistence", [&] { return determinism(root); });

  std::cout << (failures ? "FAILED " : "ALL PASSED ") << (9 - failures) << "/9" << std::endl;
  return failures ? 1 : 0;
}
