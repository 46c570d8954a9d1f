#pragma once

// Two-stage supervised fine-tuning. Stage 1 aligns the projected channels;
// stage 2 trains on curated dialogues that carry the trigger supervision.
// Encoders are never in the optimizer's parameter list.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "geosense/model.hpp"
#include "geosense/optim.hpp"

namespace geosense {

enum class Role : std::uint8_t { User, Assistant };
enum class TriggerLabel : std::uint8_t { MustTrigger, MustSuppress, Unconstrained };
enum class Stage : std::uint8_t { Align, Percept };
// Which model a sample set is laid out for.
enum class Variant : std::uint8_t { Adaptive, Fusion, Never };

std::string to_string(TriggerLabel l);
std::string to_string(Stage s);
std::string to_string(Variant v);
TriggerLabel parse_trigger_label(std::string_view s);
Variant parse_variant(std::string_view s);

struct Turn {
  Role role = Role::User;
  std::vector<TokenId> ids;
};

struct DialogueSample {
  std::vector<Turn> turns;
  // The geometry segment is inserted right after turns[*geometry_in_turn].
  std::optional<int> geometry_in_turn;
  // Geometry pooled onto the vision rows instead (rigid-fusion layout).
  bool fuse_geometry = false;
  TriggerLabel trigger_label = TriggerLabel::Unconstrained;
  Scene scene;  // provenance: seed, task kind, split are persisted

  // Throws ContractError on a violated trigger-label invariant.
  void validate() const;
};

// Per-position role of the assembled layout.
enum class PosRole : std::uint8_t { User, Assistant, Geometry };

struct SampleLayout {
  std::vector<TokenId> ids;  // token ids incl. the geometry segment
  std::vector<PosRole> roles;
};

SampleLayout layout(const DialogueSample& sample, int geometry_tokens);

// mask[i] is set when position i predicts an assistant token (i + 1).
std::vector<std::uint8_t> loss_mask(const DialogueSample& sample, int geometry_tokens);

// Single-turn samples: prompt → answer EOS.
DialogueSample answer_only_sample(const Scene& scene, const WorldConfig& world,
                                  Variant variant, bool with_geometry);

// Stage-1 data: geometry present for GEO_REQUIRED sources (adaptive model),
// fused everywhere (fusion model), never (never model).
std::vector<DialogueSample> make_align_samples(const std::vector<Scene>& scenes,
                                               const WorldConfig& world, Variant variant);

// Same scenes and answers, laid out for a single-pass comparator.
std::vector<DialogueSample> to_variant(const std::vector<DialogueSample>& samples,
                                       const WorldConfig& world, Variant variant);

template <typename T>
AssembledSequence<T> assemble_sample(Tape<T>& tape, const GeoSenseModel<T>& model,
                                     const DialogueSample& sample);

// Mean next-token cross entropy over assistant positions.
template <typename T>
Tensor<T> sample_loss(Tape<T>& tape, const GeoSenseModel<T>& model, const DialogueSample& sample);

struct TrainConfig {
  Stage stage = Stage::Align;
  AdamConfig adam;
  int batch_size = 8;
  int epochs = 3;
  std::uint64_t seed = 1;
  bool source_pure_batches = true;

  void validate() const;
};

// Index lists into the sample vector, one per optimizer step, for all epochs.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<DialogueSample>& samples,
                                                   const TrainConfig& cfg);

struct LossPoint {
  std::size_t step = 0;
  Stage stage = Stage::Align;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<LossPoint> curve;
  std::size_t steps = 0;
};

TrainResult train(Model& model, const std::vector<DialogueSample>& samples, const TrainConfig& cfg);
TrainResult stage1_align(Model& model, const std::vector<DialogueSample>& samples,
                         const TrainConfig& cfg);
TrainResult stage2_percept(Model& model, const std::vector<DialogueSample>& samples,
                           const TrainConfig& cfg);

struct EncoderSnapshot {
  std::uint64_t vision = 0;
  std::uint64_t geometry = 0;
};

EncoderSnapshot snapshot_encoders(const Model& model);
bool freeze_check(const Model& model, const EncoderSnapshot& snapshot);

std::string sample_to_json_line(const DialogueSample& s);
// Resolves the scene by (seed, task kind) in `scenes`.
DialogueSample sample_from_json_line(const std::string& line, const std::vector<Scene>& scenes);

void save_loss_curve(const std::filesystem::path& path, const std::vector<LossPoint>& curve);

}  // namespace geosense
