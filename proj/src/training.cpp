#include "geosense/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include <json.hpp>

#include "geosense/errors.hpp"

namespace geosense {

using nlohmann::json;

std::string to_string(TriggerLabel l) {
  switch (l) {
    case TriggerLabel::MustTrigger: return "MUST_TRIGGER";
    case TriggerLabel::MustSuppress: return "MUST_SUPPRESS";
    case TriggerLabel::Unconstrained: return "UNCONSTRAINED";
  }
  return "?";
}

std::string to_string(Stage s) { return s == Stage::Align ? "ALIGN" : "PERCEPT"; }

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Adaptive: return "adaptive";
    case Variant::Fusion: return "fusion";
    case Variant::Never: return "never";
  }
  return "?";
}

TriggerLabel parse_trigger_label(std::string_view s) {
  for (auto l : {TriggerLabel::MustTrigger, TriggerLabel::MustSuppress, TriggerLabel::Unconstrained})
    if (to_string(l) == s) return l;
  throw FormatError("unknown trigger label '" + std::string(s) + "'");
}

Variant parse_variant(std::string_view s) {
  for (auto v : {Variant::Adaptive, Variant::Fusion, Variant::Never})
    if (to_string(v) == s) return v;
  throw UsageError("unknown variant '" + std::string(s) + "' (expected adaptive, fusion or never)");
}

void DialogueSample::validate() const {
  if (turns.empty()) throw ContractError("dialogue has no turns");
  if (geometry_in_turn && (*geometry_in_turn < 0 || *geometry_in_turn >= static_cast<int>(turns.size()))) {
    throw ContractError("geometry_in_turn out of range");
  }
  if (geometry_in_turn && fuse_geometry) {
    throw ContractError("a sample cannot both fuse geometry and carry a geometry segment");
  }
  auto has_trigger = [](const Turn& t) {
    return std::find(t.ids.begin(), t.ids.end(), tok::kTrigger) != t.ids.end();
  };
  if (trigger_label == TriggerLabel::MustTrigger) {
    bool ok = false;
    for (std::size_t i = 0; i < turns.size(); ++i) {
      const auto& t = turns[i];
      if (t.role == Role::Assistant && !t.ids.empty() && t.ids.back() == tok::kTrigger &&
          geometry_in_turn && *geometry_in_turn >= static_cast<int>(i)) {
        ok = true;
      }
    }
    if (!ok) {
      throw ContractError("MUST_TRIGGER sample needs an assistant turn ending in the trigger "
                          "followed by the geometry segment");
    }
  }
  if (trigger_label == TriggerLabel::MustSuppress) {
    if (geometry_in_turn || fuse_geometry) throw ContractError("MUST_SUPPRESS sample carries geometry");
    for (const auto& t : turns)
      if (has_trigger(t)) throw ContractError("MUST_SUPPRESS sample contains the trigger");
  }
}

SampleLayout layout(const DialogueSample& sample, int geometry_tokens) {
  SampleLayout out;
  for (std::size_t i = 0; i < sample.turns.size(); ++i) {
    const auto& t = sample.turns[i];
    for (auto id : t.ids) {
      out.ids.push_back(id);
      out.roles.push_back(t.role == Role::Assistant ? PosRole::Assistant : PosRole::User);
    }
    if (sample.geometry_in_turn && *sample.geometry_in_turn == static_cast<int>(i)) {
      out.ids.push_back(tok::kGeoStart);
      out.ids.insert(out.ids.end(), static_cast<std::size_t>(geometry_tokens), tok::kVggtPad);
      out.ids.push_back(tok::kGeoEnd);
      out.roles.insert(out.roles.end(), static_cast<std::size_t>(geometry_tokens) + 2,
                       PosRole::Geometry);
    }
  }
  return out;
}

std::vector<std::uint8_t> loss_mask(const DialogueSample& sample, int geometry_tokens) {
  const auto lay = layout(sample, geometry_tokens);
  std::vector<std::uint8_t> mask(lay.ids.size(), 0);
  bool any = false;
  for (std::size_t i = 0; i + 1 < lay.ids.size(); ++i) {
    mask[i] = lay.roles[i + 1] == PosRole::Assistant ? 1 : 0;
    any = any || mask[i];
  }
  if (!any) throw EmptySupervisionError("dialogue has no supervised assistant tokens");
  return mask;
}

DialogueSample answer_only_sample(const Scene& scene, const WorldConfig& world, Variant variant,
                                  bool with_geometry) {
  DialogueSample s;
  s.scene = scene;
  s.turns.push_back({Role::User, prompt_tokens(scene, world)});
  auto answer = scene.answer;
  answer.push_back(tok::kEos);
  s.turns.push_back({Role::Assistant, std::move(answer)});
  if (with_geometry) {
    if (variant == Variant::Fusion) s.fuse_geometry = true;
    if (variant == Variant::Adaptive) s.geometry_in_turn = 0;
  }
  s.trigger_label = TriggerLabel::Unconstrained;
  return s;
}

std::vector<DialogueSample> make_align_samples(const std::vector<Scene>& scenes,
                                               const WorldConfig& world, Variant variant) {
  std::vector<DialogueSample> out;
  out.reserve(scenes.size());
  for (const auto& sc : scenes) {
    const bool geo = variant == Variant::Fusion ||
                     (variant == Variant::Adaptive && sc.task_kind == TaskKind::GeoRequired);
    out.push_back(answer_only_sample(sc, world, variant, geo));
  }
  return out;
}

std::vector<DialogueSample> to_variant(const std::vector<DialogueSample>& samples,
                                       const WorldConfig& world, Variant variant) {
  if (variant == Variant::Adaptive) return samples;
  std::vector<DialogueSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples)
    out.push_back(answer_only_sample(s.scene, world, variant, variant == Variant::Fusion));
  return out;
}

template <typename T>
AssembledSequence<T> assemble_sample(Tape<T>& tape, const GeoSenseModel<T>& model,
                                     const DialogueSample& sample) {
  sample.validate();
  const auto vision = model.vision_tokens(tape, sample.scene);
  std::vector<TokenId> head;
  std::size_t next = 0;
  if (sample.geometry_in_turn) {
    for (; next <= static_cast<std::size_t>(*sample.geometry_in_turn); ++next) {
      const auto& ids = sample.turns[next].ids;
      head.insert(head.end(), ids.begin(), ids.end());
    }
  } else {
    // Vision placeholders live in the first turn.
    const auto& ids = sample.turns[0].ids;
    head.assign(ids.begin(), ids.end());
    next = 1;
  }
  AssembledSequence<T> seq;
  if (sample.fuse_geometry) {
    seq = assemble_fused<T>(tape, head, vision, model.geometry_tokens(tape, sample.scene));
  } else if (sample.geometry_in_turn) {
    seq = assemble<T>(head, vision, model.geometry_tokens(tape, sample.scene));
  } else {
    seq = assemble<T>(head, vision, std::nullopt);
  }
  for (; next < sample.turns.size(); ++next) append_text(seq, std::span<const TokenId>(sample.turns[next].ids));
  return seq;
}

template <typename T>
Tensor<T> sample_loss(Tape<T>& tape, const GeoSenseModel<T>& model, const DialogueSample& sample) {
  const auto seq = assemble_sample(tape, model, sample);
  const auto mask = loss_mask(sample, model.config().world.geometry_tokens());
  if (mask.size() != seq.size()) throw ContractError("loss mask length differs from sequence length");
  std::vector<int> targets(seq.size(), 0);
  for (std::size_t i = 0; i + 1 < seq.size(); ++i) targets[i] = seq.token_ids[i + 1];
  const auto logits = model.backbone.forward(tape, seq);
  return cross_entropy(tape, logits, std::span<const int>(targets), std::span<const std::uint8_t>(mask));
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (adam.lr < 0) throw ConfigError("learning rate must be non-negative");
  if (adam.warmup_ratio < 0 || adam.warmup_ratio >= 1) throw ConfigError("warmup_ratio must lie in [0, 1)");
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<DialogueSample>& samples,
                                                   const TrainConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(cfg.stage));
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::vector<std::size_t>> batches;
  for (int e = 0; e < cfg.epochs; ++e) {
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const int key = cfg.source_pure_batches ? static_cast<int>(samples[i].scene.task_kind) : 0;
      groups[key].push_back(i);
    }
    std::vector<std::vector<std::size_t>> epoch;
    for (auto& [key, idx] : groups) {
      std::shuffle(idx.begin(), idx.end(), rng);
      for (std::size_t s = 0; s < idx.size(); s += bs)
        epoch.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(s),
                           idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), s + bs)));
    }
    std::shuffle(epoch.begin(), epoch.end(), rng);
    for (auto& b : epoch) batches.push_back(std::move(b));
  }
  return batches;
}

TrainResult train(Model& model, const std::vector<DialogueSample>& samples, const TrainConfig& cfg) {
  cfg.validate();
  for (const auto& s : samples) s.validate();
  const auto batches = make_batches(samples, cfg);
  TrainResult result;
  if (batches.empty()) return result;

  std::vector<Tensor<float>> params;
  for (auto* p : model.trainable()) params.push_back(*p);
  AdamState<float> state(cfg.adam);

  for (std::size_t step = 0; step < batches.size(); ++step) {
    for (auto& p : params) p.zero_grad();
    const auto& batch = batches[step];
    const float inv = 1.0f / static_cast<float>(batch.size());
    double total = 0.0;
    const auto abort = [&](const std::string& why) {
      return NumericError("non-finite loss at step " + std::to_string(step) + " (" + to_string(cfg.stage) +
                          ")" + why);
    };
    for (auto idx : batch) {
      Tape<float> tape;
      Tensor<float> loss;
      try {
        loss = sample_loss(tape, model, samples[idx]);
      } catch (const NumericError& e) {
        // NaN parameters usually surface inside softmax before the loss exists.
        throw abort(std::string(": ") + e.what());
      }
      const double v = loss.item();
      if (!std::isfinite(v)) throw abort("");
      total += v;
      tape.backward(scale(tape, loss, inv));
    }
    adam_step(std::span<Tensor<float>>(params), state, batches.size());
    result.curve.push_back({step, cfg.stage, total / static_cast<double>(batch.size())});
  }
  result.steps = batches.size();
  return result;
}

TrainResult stage1_align(Model& model, const std::vector<DialogueSample>& samples,
                         const TrainConfig& cfg) {
  if (cfg.stage != Stage::Align) throw ContractError("stage1_align requires an ALIGN config");
  for (const auto& s : samples) {
    if (s.trigger_label != TriggerLabel::Unconstrained) {
      throw ContractError("alignment data carries no trigger supervision");
    }
  }
  return train(model, samples, cfg);
}

TrainResult stage2_percept(Model& model, const std::vector<DialogueSample>& samples,
                           const TrainConfig& cfg) {
  if (cfg.stage != Stage::Percept) throw ContractError("stage2_percept requires a PERCEPT config");
  return train(model, samples, cfg);
}

EncoderSnapshot snapshot_encoders(const Model& model) {
  return {tensor_digest(model.vision_encoder.weights()), tensor_digest(model.geometry_encoder.weights())};
}

bool freeze_check(const Model& model, const EncoderSnapshot& snapshot) {
  const auto now = snapshot_encoders(model);
  return now.vision == snapshot.vision && now.geometry == snapshot.geometry;
}

std::string sample_to_json_line(const DialogueSample& s) {
  json turns = json::array();
  for (const auto& t : s.turns)
    turns.push_back({{"role", t.role == Role::User ? "user" : "assistant"}, {"ids", t.ids}});
  json j;
  j["turns"] = turns;
  j["geometry_in_turn"] = s.geometry_in_turn ? json(*s.geometry_in_turn) : json(nullptr);
  j["fuse_geometry"] = s.fuse_geometry;
  j["trigger_label"] = to_string(s.trigger_label);
  j["scene_seed"] = s.scene.seed;
  j["task_kind"] = to_string(s.scene.task_kind);
  j["split"] = to_string(s.scene.split);
  return j.dump();
}

DialogueSample sample_from_json_line(const std::string& line, const std::vector<Scene>& scenes) {
  try {
    const auto j = json::parse(line);
    DialogueSample s;
    for (const auto& t : j.at("turns")) {
      const auto role = t.at("role").get<std::string>();
      if (role != "user" && role != "assistant") throw FormatError("unknown role '" + role + "'");
      s.turns.push_back({role == "user" ? Role::User : Role::Assistant,
                         t.at("ids").get<std::vector<TokenId>>()});
    }
    if (!j.at("geometry_in_turn").is_null()) s.geometry_in_turn = j.at("geometry_in_turn").get<int>();
    s.fuse_geometry = j.at("fuse_geometry").get<bool>();
    s.trigger_label = parse_trigger_label(j.at("trigger_label").get<std::string>());
    const auto seed = j.at("scene_seed").get<std::uint64_t>();
    const auto kind = parse_task_kind(j.at("task_kind").get<std::string>());
    const auto split = parse_split(j.at("split").get<std::string>());
    const auto it = std::find_if(scenes.begin(), scenes.end(), [&](const Scene& sc) {
      return sc.seed == seed && sc.task_kind == kind && sc.split == split;
    });
    if (it == scenes.end()) {
      throw FormatError("dialogue refers to scene " + std::to_string(seed) + " (" + to_string(kind) +
                        ") missing from the benchmark");
    }
    s.scene = *it;
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed dialogue record: ") + e.what());
  }
}

void save_loss_curve(const std::filesystem::path& path, const std::vector<LossPoint>& curve) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << "step stage loss\n";
  char buf[64];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%.9g", p.loss);
    out << p.step << ' ' << to_string(p.stage) << ' ' << buf << '\n';
  }
}

template AssembledSequence<float> assemble_sample(Tape<float>&, const GeoSenseModel<float>&,
                                                  const DialogueSample&);
template AssembledSequence<double> assemble_sample(Tape<double>&, const GeoSenseModel<double>&,
                                                   const DialogueSample&);
template Tensor<float> sample_loss(Tape<float>&, const GeoSenseModel<float>&, const DialogueSample&);
template Tensor<double> sample_loss(Tape<double>&, const GeoSenseModel<double>&, const DialogueSample&);

}  // namespace geosense
