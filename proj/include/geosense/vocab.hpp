#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace geosense {

using TokenId = std::int32_t;

// Closed vocabulary shared by every module. Ids are fixed; checkpoints and
// data files store them directly.
namespace tok {

inline constexpr TokenId kBos = 0;
inline constexpr TokenId kEos = 1;
inline constexpr TokenId kTurnSep = 2;
inline constexpr TokenId kVisionPad = 3;  // <|vision_pad|>
inline constexpr TokenId kVggtPad = 4;    // <|vggt_pad|>
inline constexpr TokenId kGeoStart = 5;
inline constexpr TokenId kGeoEnd = 6;
inline constexpr TokenId kTrigger = 7;  // <vggt>

inline constexpr TokenId kBackground0 = 8;
inline constexpr int kNumBackgrounds = 6;

inline constexpr TokenId kWhich = 14;
inline constexpr TokenId kNearest = 15;
inline constexpr TokenId kFarthest = 16;
inline constexpr TokenId kColor = 17;
inline constexpr TokenId kShape = 18;
inline constexpr TokenId kCount = 19;
inline constexpr TokenId kNeed = 20;
inline constexpr TokenId kDepth = 21;

inline constexpr TokenId kObject0 = 22;
inline constexpr int kNumObjectIds = 6;
inline constexpr TokenId kColor0 = 28;
inline constexpr int kNumColors = 4;
inline constexpr TokenId kShape0 = 32;
inline constexpr int kNumShapes = 4;
inline constexpr TokenId kNumber0 = 36;
inline constexpr int kNumNumbers = 7;

inline constexpr int kVocabSize = 43;

inline constexpr TokenId background(int i) { return kBackground0 + i; }
inline constexpr TokenId object(int i) { return kObject0 + i; }
inline constexpr TokenId color(int i) { return kColor0 + i; }
inline constexpr TokenId shape(int i) { return kShape0 + i; }
inline constexpr TokenId number(int i) { return kNumber0 + i; }

}  // namespace tok

// Strategy-A chain of thought ("this question needs depth information"),
// terminated by the trigger.
inline constexpr std::array<TokenId, 3> kDepthRequestTurn{tok::kNeed, tok::kDepth, tok::kTrigger};

class Vocab {
 public:
  static constexpr int size() { return tok::kVocabSize; }
  static bool is_special(TokenId id) { return id >= tok::kBos && id <= tok::kTrigger; }
  static bool is_valid(TokenId id) { return id >= 0 && id < tok::kVocabSize; }
  static std::string name(TokenId id);
  static std::optional<TokenId> parse(std::string_view name);
  static std::string render(std::span<const TokenId> ids);
};

}  // namespace geosense
