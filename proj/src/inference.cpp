#include "geosense/inference.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "geosense/errors.hpp"

namespace geosense {

using nlohmann::json;

namespace {

constexpr TokenId kPass1Stop[] = {tok::kEos, tok::kTrigger};
constexpr TokenId kAnswerStop[] = {tok::kEos};

double softmax_prob(std::span<const float> row, TokenId id) {
  double mx = -INFINITY;
  for (auto v : row) mx = std::max(mx, static_cast<double>(v));
  double z = 0.0;
  for (auto v : row) z += std::exp(static_cast<double>(v) - mx);
  return std::exp(static_cast<double>(row[static_cast<std::size_t>(id)]) - mx) / z;
}

Tensor<float> vision_rows(const Model& model, Tape<float>& tape, const Scene& scene,
                          const InferenceOptions& opts) {
  if (opts.vision_features) return model.vision_tokens_from_features(tape, *opts.vision_features);
  return model.vision_tokens(tape, scene);
}

}  // namespace

std::string to_string(Policy p) {
  switch (p) {
    case Policy::Adaptive: return "ADAPTIVE";
    case Policy::Never: return "NEVER";
    case Policy::RigidFusion: return "RIGID_FUSION";
    case Policy::AlwaysIndependent: return "ALWAYS_INDEPENDENT";
  }
  return "?";
}

Policy parse_policy(std::string_view s) {
  for (auto p : kAllPolicies)
    if (to_string(p) == s) return p;
  throw FormatError("unknown policy '" + std::string(s) + "'");
}

std::size_t InferenceTrace::total_tokens() const {
  std::size_t n = 0;
  for (auto c : token_counts) n += c;
  return n;
}

TriggerReadout read_trigger(const Model& model, const AssembledSequence<float>& prefix) {
  auto seq = prefix;
  append_text(seq, std::span<const TokenId>(kDepthRequestTurn.data(), kDepthRequestTurn.size() - 1));
  Tape<float> tape(false);
  const auto logits = model.backbone.forward(tape, seq);
  const auto v = logits.cols();
  const auto row = [&](std::size_t pos) { return logits.data().subspan(pos * v, v); };
  const auto start = prefix.size() - 1;
  TriggerReadout r;
  r.first = softmax_prob(row(start), tok::kTrigger);
  r.path = 1.0;
  for (std::size_t k = 0; k < kDepthRequestTurn.size(); ++k)
    r.path *= softmax_prob(row(start + k), kDepthRequestTurn[k]);
  r.at_last = softmax_prob(row(start + kDepthRequestTurn.size() - 1), tok::kTrigger);
  return r;
}

std::vector<TokenId> strip_answer(const std::vector<TokenId>& generated) {
  auto it = std::find(generated.begin(), generated.end(), tok::kEos);
  return {generated.begin(), it};
}

Decision internal_sense_decide(const Model& model, const Scene& scene,
                               const InferenceOptions& opts) {
  const auto prompt = prompt_tokens(scene, model.config().world);
  Tape<float> tape(false);
  const auto seq = assemble<float>(prompt, vision_rows(model, tape, scene, opts), std::nullopt);
  Decision d;
  d.prompt_length = seq.size();
  d.pass1_tokens = generate(model.backbone, seq, opts.max_new_pass1,
                            std::span<const TokenId>(kPass1Stop));
  d.triggered = std::find(d.pass1_tokens.begin(), d.pass1_tokens.end(), tok::kTrigger) !=
                d.pass1_tokens.end();
  const auto readout = read_trigger(model, seq);
  d.confidence = readout.path;
  d.confidence_first = readout.first;
  return d;
}

InferenceTrace two_pass_infer(const Model& model, const Scene& scene, const InferenceOptions& opts) {
  InferenceTrace t;
  t.policy = Policy::Adaptive;
  t.scene_seed = scene.seed;
  t.task_kind = scene.task_kind;
  t.expected_answer = scene.answer;

  const auto d = internal_sense_decide(model, scene, opts);
  t.pass1_tokens = d.pass1_tokens;
  t.triggered = d.triggered;
  t.trigger_conf = d.confidence;
  t.trigger_conf_first = d.confidence_first;
  t.prompt_lengths.push_back(d.prompt_length);
  t.token_counts.push_back(d.prompt_length + d.pass1_tokens.size());

  if (!d.triggered) {
    t.final_answer = strip_answer(d.pass1_tokens);
  } else {
    // prompt, pass-1 turn up to and including the trigger, TURN_SEP, geometry
    auto text = prompt_tokens(scene, model.config().world);
    const auto trig = std::find(d.pass1_tokens.begin(), d.pass1_tokens.end(), tok::kTrigger);
    text.insert(text.end(), d.pass1_tokens.begin(), trig + 1);
    text.push_back(tok::kTurnSep);
    try {
      Tape<float> tape(false);
      auto vision = vision_rows(model, tape, scene, opts);
      // A pass-1 turn holding placeholder ids fails assembly; that is
      // recorded in the trace rather than thrown.
      const auto seq = assemble<float>(text, vision, model.geometry_tokens(tape, scene));
      t.prompt_lengths.push_back(seq.size());
      auto out = generate(model.backbone, seq, opts.max_new_pass2,
                          std::span<const TokenId>(kAnswerStop));
      t.token_counts.push_back(seq.size() + out.size());
      t.final_answer = strip_answer(out);
      t.pass2_tokens = std::move(out);
    } catch (const Error& e) {
      t.error = e.what();
      t.pass2_tokens = std::vector<TokenId>{};
      t.final_answer.clear();
    }
  }
  t.correct = t.final_answer == t.expected_answer;
  return t;
}

InferenceTrace policy_infer(const Model& model, const Scene& scene, Policy policy,
                            const InferenceOptions& opts) {
  if (policy == Policy::Adaptive) return two_pass_infer(model, scene, opts);

  InferenceTrace t;
  t.policy = policy;
  t.scene_seed = scene.seed;
  t.task_kind = scene.task_kind;
  t.expected_answer = scene.answer;

  const auto prompt = prompt_tokens(scene, model.config().world);
  Tape<float> tape(false);
  auto vision = vision_rows(model, tape, scene, opts);
  AssembledSequence<float> seq;
  switch (policy) {
    case Policy::Never:
      seq = assemble<float>(prompt, vision, std::nullopt);
      break;
    case Policy::RigidFusion:
      seq = assemble_fused<float>(tape, prompt, vision, model.geometry_tokens(tape, scene));
      break;
    case Policy::AlwaysIndependent:
      seq = assemble<float>(prompt, vision, model.geometry_tokens(tape, scene));
      break;
    case Policy::Adaptive:
      break;
  }
  const auto readout = read_trigger(model, seq);
  t.trigger_conf = readout.path;
  t.trigger_conf_first = readout.first;
  t.pass1_tokens = generate(model.backbone, seq, opts.max_new_pass1,
                            std::span<const TokenId>(kAnswerStop));
  t.triggered = policy != Policy::Never;  // geometry injected or not
  t.prompt_lengths.push_back(seq.size());
  t.token_counts.push_back(seq.size() + t.pass1_tokens.size());
  t.final_answer = strip_answer(t.pass1_tokens);
  t.correct = t.final_answer == t.expected_answer;
  return t;
}

double activation_rate(const std::vector<InferenceTrace>& traces) {
  if (traces.empty()) throw ContractError("activation_rate: empty trace list");
  std::size_t n = 0;
  for (const auto& t : traces) n += t.triggered ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(traces.size());
}

std::string trace_to_json_line(const InferenceTrace& t) {
  json j;
  j["scene_seed"] = t.scene_seed;
  j["task_kind"] = to_string(t.task_kind);
  j["policy"] = to_string(t.policy);
  j["triggered"] = t.triggered;
  j["trigger_conf"] = t.trigger_conf;
  j["trigger_conf_first"] = t.trigger_conf_first;
  j["token_counts"] = t.token_counts;
  j["prompt_lengths"] = t.prompt_lengths;
  j["pass1_tokens"] = t.pass1_tokens;
  j["pass2_tokens"] = t.pass2_tokens ? json(*t.pass2_tokens) : json(nullptr);
  j["answer_tokens"] = t.final_answer;
  j["expected_tokens"] = t.expected_answer;
  j["correct"] = t.correct;
  if (!t.error.empty()) j["error"] = t.error;
  return j.dump();
}

InferenceTrace trace_from_json_line(const std::string& line) {
  try {
    const auto j = json::parse(line);
    InferenceTrace t;
    t.scene_seed = j.at("scene_seed").get<std::uint64_t>();
    t.task_kind = parse_task_kind(j.at("task_kind").get<std::string>());
    t.policy = parse_policy(j.at("policy").get<std::string>());
    t.triggered = j.at("triggered").get<bool>();
    t.trigger_conf = j.at("trigger_conf").get<double>();
    t.trigger_conf_first = j.at("trigger_conf_first").get<double>();
    t.token_counts = j.at("token_counts").get<std::vector<std::size_t>>();
    t.prompt_lengths = j.at("prompt_lengths").get<std::vector<std::size_t>>();
    t.pass1_tokens = j.at("pass1_tokens").get<std::vector<TokenId>>();
    if (!j.at("pass2_tokens").is_null()) t.pass2_tokens = j.at("pass2_tokens").get<std::vector<TokenId>>();
    t.final_answer = j.at("answer_tokens").get<std::vector<TokenId>>();
    t.expected_answer = j.at("expected_tokens").get<std::vector<TokenId>>();
    t.correct = j.at("correct").get<bool>();
    if (j.contains("error")) t.error = j.at("error").get<std::string>();
    return t;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed trace record: ") + e.what());
  }
}

}  // namespace geosense
