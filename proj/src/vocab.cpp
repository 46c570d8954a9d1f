#include "geosense/vocab.hpp"

#include <array>

namespace geosense {

namespace {

constexpr std::array<std::string_view, tok::kVocabSize> kNames{
    "<bos>",     "<eos>",    "<turn>",   "<|vision_pad|>", "<|vggt_pad|>", "<geo_start>",
    "<geo_end>", "<vggt>",   "kitchen",  "office",         "garage",       "garden",
    "hall",      "studio",   "which",    "nearest",        "farthest",     "color",
    "shape",     "how-many", "needs",    "depth",          "object-0",     "object-1",
    "object-2",  "object-3", "object-4", "object-5",       "red",          "green",
    "blue",      "yellow",   "cube",     "sphere",         "cone",         "cylinder",
    "0",         "1",        "2",        "3",              "4",            "5",
    "6"};

}  // namespace

std::string Vocab::name(TokenId id) {
  if (!is_valid(id)) return "<unk:" + std::to_string(id) + ">";
  return std::string(kNames[static_cast<std::size_t>(id)]);
}

std::optional<TokenId> Vocab::parse(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == name) return static_cast<TokenId>(i);
  }
  return std::nullopt;
}

std::string Vocab::render(std::span<const TokenId> ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += name(ids[i]);
  }
  return out;
}

}  // namespace geosense
