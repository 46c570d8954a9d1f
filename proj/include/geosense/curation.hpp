#pragma once

// Dual-condition inference, quadrant labels and the Strategy A / B rewrites.
// Quadrant coordinates are (correct with geometry, correct without).

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "geosense/inference.hpp"
#include "geosense/training.hpp"

namespace geosense {

enum class Quadrant : std::uint8_t { TT, TF, FT, FF };
inline constexpr std::array<Quadrant, 4> kAllQuadrants{Quadrant::TT, Quadrant::TF, Quadrant::FT,
                                                       Quadrant::FF};

std::string to_string(Quadrant q);
Quadrant classify_quadrant(bool correct_with, bool correct_without);

struct QuadrantRecord {
  Scene scene;
  std::vector<TokenId> pred_with;
  std::vector<TokenId> pred_without;
  bool correct_with = false;
  bool correct_without = false;
  Quadrant quadrant = Quadrant::FF;
};

QuadrantRecord make_record(const Scene& scene, std::vector<TokenId> pred_with,
                           std::vector<TokenId> pred_without);

std::vector<QuadrantRecord> dual_condition_infer(const Model& model, const std::vector<Scene>& scenes);

DialogueSample strategy_a_rewrite(const QuadrantRecord& record, const WorldConfig& world);
DialogueSample strategy_b_rewrite(const QuadrantRecord& record, const WorldConfig& world);
DialogueSample consistent_passthrough(const QuadrantRecord& record, const WorldConfig& world);

struct MixConfig {
  std::uint64_t seed = 1;
  // Per-quadrant caps (TT, TF, FT); negative means keep all.
  int max_tt = -1;
  int max_tf = -1;
  int max_ft = -1;
};

struct CuratedSet {
  std::vector<DialogueSample> samples;
  std::array<std::size_t, 4> record_counts{};  // input records per quadrant
  std::size_t tt_kept = 0;
  std::size_t tf_kept = 0;
  std::size_t ft_kept = 0;
  std::vector<std::string> warnings;
  // Background tokens seen under both MUST_TRIGGER and MUST_SUPPRESS.
  std::vector<TokenId> shortcut_witness;
};

CuratedSet build_perception_set(const std::vector<QuadrantRecord>& records, const WorldConfig& world,
                                const MixConfig& mix);

// Throws ContractError naming the first violated invariant.
void check_curated_invariants(const CuratedSet& set);

struct QuadrantStats {
  std::array<std::size_t, 4> counts{};
  std::array<double, 4> fractions{};
  std::size_t total = 0;
};

QuadrantStats quadrant_stats(const std::vector<QuadrantRecord>& records);

// Pilot-study proportions on the full-scale data, for the report's comparison row.
inline constexpr std::array<double, 4> kReferenceQuadrantFractions{0.67, 0.05, 0.03, 0.25};
inline constexpr std::size_t kReferenceQuadrantSamples = 700000;

std::string quadrant_report_json(const QuadrantStats& stats, const CuratedSet& set);

void save_curated(const std::filesystem::path& path, const CuratedSet& set);
std::vector<DialogueSample> load_curated(const std::filesystem::path& path,
                                         const std::vector<Scene>& scenes);
std::string record_to_json_line(const QuadrantRecord& r);

}  // namespace geosense
