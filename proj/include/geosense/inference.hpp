#pragma once

// Two-pass "internal sense decision" protocol and the comparison policies.
//
// Pass 1 sees text + vision only. If the generated turn contains the trigger,
// pass 2 re-runs on: prompt, the pass-1 turn, TURN_SEP, geometry segment.

#include <optional>
#include <string>
#include <vector>

#include "geosense/model.hpp"

namespace geosense {

enum class Policy { Adaptive, Never, RigidFusion, AlwaysIndependent };

inline constexpr std::array<Policy, 4> kAllPolicies{Policy::Never, Policy::RigidFusion,
                                                    Policy::AlwaysIndependent, Policy::Adaptive};

std::string to_string(Policy p);
Policy parse_policy(std::string_view s);

struct InferenceOptions {
  int max_new_pass1 = 4;
  int max_new_pass2 = 3;
  // Replaces the vision encoder output [T_v × D_2D] (noise control).
  std::optional<Tensor<float>> vision_features;
};

struct InferenceTrace {
  Policy policy = Policy::Adaptive;
  std::uint64_t scene_seed = 0;
  TaskKind task_kind = TaskKind::GeoNeutral;
  std::vector<TokenId> pass1_tokens;
  bool triggered = false;
  double trigger_conf = 0.0;        // path confidence of the depth-request turn
  double trigger_conf_first = 0.0;  // P(trigger) at the first assistant position
  std::optional<std::vector<TokenId>> pass2_tokens;
  std::vector<TokenId> final_answer;
  // Per pass: prompt length + generated tokens.
  std::vector<std::size_t> token_counts;
  std::vector<std::size_t> prompt_lengths;
  std::vector<TokenId> expected_answer;
  bool correct = false;
  std::string error;  // non-empty when pass 2 could not run

  std::size_t total_tokens() const;
};

struct Decision {
  bool triggered = false;
  double confidence = 0.0;
  double confidence_first = 0.0;
  std::vector<TokenId> pass1_tokens;
  std::size_t prompt_length = 0;
};

// Confidence readouts at the decision position (end of `prefix`):
// first = P(TRIGGER) there; path = product of teacher-forced probabilities
// of the depth-request turn, i.e. the probability of emitting it greedily or not.
struct TriggerReadout {
  double first = 0.0;
  double path = 0.0;
  double at_last = 0.0;  // P(TRIGGER | need, depth)
};
TriggerReadout read_trigger(const Model& model, const AssembledSequence<float>& prefix);

Decision internal_sense_decide(const Model& model, const Scene& scene,
                               const InferenceOptions& opts = {});

InferenceTrace two_pass_infer(const Model& model, const Scene& scene,
                              const InferenceOptions& opts = {});

InferenceTrace policy_infer(const Model& model, const Scene& scene, Policy policy,
                            const InferenceOptions& opts = {});

// Generated ids up to (not including) the first EOS.
std::vector<TokenId> strip_answer(const std::vector<TokenId>& generated);

double activation_rate(const std::vector<InferenceTrace>& traces);

std::string trace_to_json_line(const InferenceTrace& t);
InferenceTrace trace_from_json_line(const std::string& line);

}  // namespace geosense
