#include "geosense/curation.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>

#include <json.hpp>

#include "geosense/errors.hpp"

namespace geosense {

using nlohmann::json;

std::string to_string(Quadrant q) {
  switch (q) {
    case Quadrant::TT: return "TT";
    case Quadrant::TF: return "TF";
    case Quadrant::FT: return "FT";
    case Quadrant::FF: return "FF";
  }
  return "?";
}

Quadrant classify_quadrant(bool correct_with, bool correct_without) {
  if (correct_with) return correct_without ? Quadrant::TT : Quadrant::TF;
  return correct_without ? Quadrant::FT : Quadrant::FF;
}

QuadrantRecord make_record(const Scene& scene, std::vector<TokenId> pred_with,
                           std::vector<TokenId> pred_without) {
  QuadrantRecord r;
  r.scene = scene;
  r.correct_with = pred_with == scene.answer;
  r.correct_without = pred_without == scene.answer;
  r.pred_with = std::move(pred_with);
  r.pred_without = std::move(pred_without);
  r.quadrant = classify_quadrant(r.correct_with, r.correct_without);
  return r;
}

std::vector<QuadrantRecord> dual_condition_infer(const Model& model, const std::vector<Scene>& scenes) {
  std::vector<QuadrantRecord> out;
  out.reserve(scenes.size());
  for (const auto& sc : scenes) {
    auto with = policy_infer(model, sc, Policy::AlwaysIndependent);
    auto without = policy_infer(model, sc, Policy::Never);
    out.push_back(make_record(sc, std::move(with.final_answer), std::move(without.final_answer)));
  }
  return out;
}

namespace {

void require_quadrant(const QuadrantRecord& r, Quadrant q, const char* what) {
  if (r.quadrant != q) {
    throw ContractError(std::string(what) + " expects a " + to_string(q) + " record, got " +
                        to_string(r.quadrant));
  }
}

std::vector<TokenId> answer_with_eos(const Scene& scene) {
  auto a = scene.answer;
  a.push_back(tok::kEos);
  return a;
}

}  // namespace

DialogueSample strategy_a_rewrite(const QuadrantRecord& record, const WorldConfig& world) {
  require_quadrant(record, Quadrant::TF, "strategy_a_rewrite");
  DialogueSample s;
  s.scene = record.scene;
  s.turns.push_back({Role::User, prompt_tokens(record.scene, world)});
  s.turns.push_back({Role::Assistant, {kDepthRequestTurn.begin(), kDepthRequestTurn.end()}});
  s.turns.push_back({Role::User, {tok::kTurnSep}});
  s.turns.push_back({Role::Assistant, answer_with_eos(record.scene)});
  s.geometry_in_turn = 2;
  s.trigger_label = TriggerLabel::MustTrigger;
  return s;
}

DialogueSample strategy_b_rewrite(const QuadrantRecord& record, const WorldConfig& world) {
  require_quadrant(record, Quadrant::FT, "strategy_b_rewrite");
  auto s = answer_only_sample(record.scene, world, Variant::Adaptive, false);
  s.trigger_label = TriggerLabel::MustSuppress;
  return s;
}

DialogueSample consistent_passthrough(const QuadrantRecord& record, const WorldConfig& world) {
  require_quadrant(record, Quadrant::TT, "consistent_passthrough");
  return answer_only_sample(record.scene, world, Variant::Adaptive, false);
}

CuratedSet build_perception_set(const std::vector<QuadrantRecord>& records, const WorldConfig& world,
                                const MixConfig& mix) {
  CuratedSet set;
  std::array<std::vector<std::size_t>, 4> by_q;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto q = classify_quadrant(records[i].correct_with, records[i].correct_without);
    if (q != records[i].quadrant) throw ContractError("record quadrant disagrees with its flags");
    by_q[static_cast<std::size_t>(q)].push_back(i);
    ++set.record_counts[static_cast<std::size_t>(q)];
  }

  std::mt19937_64 rng(mix.seed ^ 0xC0FFEEull);
  auto capped = [&](std::vector<std::size_t> idx, int cap) {
    if (cap >= 0 && idx.size() > static_cast<std::size_t>(cap)) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(cap));
      std::sort(idx.begin(), idx.end());
    }
    return idx;
  };
  const auto tt = capped(by_q[0], mix.max_tt);
  const auto tf = capped(by_q[1], mix.max_tf);
  const auto ft = capped(by_q[2], mix.max_ft);

  for (auto i : tt) set.samples.push_back(consistent_passthrough(records[i], world));
  for (auto i : tf) set.samples.push_back(strategy_a_rewrite(records[i], world));
  for (auto i : ft) set.samples.push_back(strategy_b_rewrite(records[i], world));
  set.tt_kept = tt.size();
  set.tf_kept = tf.size();
  set.ft_kept = ft.size();
  std::shuffle(set.samples.begin(), set.samples.end(), rng);

  if (tf.empty()) set.warnings.push_back("no TF records: nothing teaches the trigger");
  if (ft.empty()) set.warnings.push_back("no FT records: nothing teaches suppression");

  std::set<TokenId> trig, supp;
  for (const auto& s : set.samples) {
    if (s.trigger_label == TriggerLabel::MustTrigger) trig.insert(s.scene.background());
    if (s.trigger_label == TriggerLabel::MustSuppress) supp.insert(s.scene.background());
  }
  std::set_intersection(trig.begin(), trig.end(), supp.begin(), supp.end(),
                        std::back_inserter(set.shortcut_witness));
  return set;
}

void check_curated_invariants(const CuratedSet& set) {
  std::size_t tt = 0, tf = 0, ft = 0;
  for (const auto& s : set.samples) {
    s.validate();
    switch (s.trigger_label) {
      case TriggerLabel::MustTrigger: ++tf; break;
      case TriggerLabel::MustSuppress: ++ft; break;
      case TriggerLabel::Unconstrained:
        ++tt;
        if (s.geometry_in_turn || s.fuse_geometry) throw ContractError("passthrough sample carries geometry");
        break;
    }
  }
  if (tt != set.tt_kept || tf != set.tf_kept || ft != set.ft_kept) {
    throw ContractError("curated label counts disagree with the kept quadrant counts");
  }
  if (set.samples.size() != set.tt_kept + set.tf_kept + set.ft_kept) {
    throw ContractError("curated size differs from |TT| + |TF| + |FT|");
  }
}

QuadrantStats quadrant_stats(const std::vector<QuadrantRecord>& records) {
  if (records.empty()) throw ContractError("quadrant_stats: no records");
  QuadrantStats s;
  for (const auto& r : records) ++s.counts[static_cast<std::size_t>(r.quadrant)];
  s.total = records.size();
  for (std::size_t q = 0; q < 4; ++q)
    s.fractions[q] = static_cast<double>(s.counts[q]) / static_cast<double>(s.total);
  return s;
}

std::string quadrant_report_json(const QuadrantStats& stats, const CuratedSet& set) {
  json j;
  json measured, reference, counts;
  for (std::size_t q = 0; q < 4; ++q) {
    const auto name = to_string(kAllQuadrants[q]);
    measured[name] = stats.fractions[q];
    counts[name] = stats.counts[q];
    reference[name] = kReferenceQuadrantFractions[q];
  }
  j["total"] = stats.total;
  j["counts"] = counts;
  j["fractions"] = measured;
  j["reference"] = {{"fractions", reference}, {"samples", kReferenceQuadrantSamples}};
  j["curated"] = {{"size", set.samples.size()},
                  {"TT_kept", set.tt_kept},
                  {"TF_kept", set.tf_kept},
                  {"FT_kept", set.ft_kept},
                  {"FF_dropped", set.record_counts[3]},
                  {"shortcut_witness", set.shortcut_witness},
                  {"warnings", set.warnings}};
  return j.dump(2);
}

void save_curated(const std::filesystem::path& path, const CuratedSet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  for (const auto& s : set.samples) out << sample_to_json_line(s) << '\n';
}

std::vector<DialogueSample> load_curated(const std::filesystem::path& path,
                                         const std::vector<Scene>& scenes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<DialogueSample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(sample_from_json_line(line, scenes));
  }
  return out;
}

std::string record_to_json_line(const QuadrantRecord& r) {
  json j;
  j["scene_seed"] = r.scene.seed;
  j["task_kind"] = to_string(r.scene.task_kind);
  j["pred_with"] = r.pred_with;
  j["pred_without"] = r.pred_without;
  j["correct_with"] = r.correct_with;
  j["correct_without"] = r.correct_without;
  j["quadrant"] = to_string(r.quadrant);
  return j.dump();
}

}  // namespace geosense
