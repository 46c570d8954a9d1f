#pragma once

// Pre-norm causal transformer decoder with learned absolute positions and a
// tied unembedding. The embedding table also holds the GEO_START / GEO_END
// boundary embeddings.

#include <cstdint>
#include <span>
#include <vector>

#include "geosense/sequence.hpp"
#include "geosense/tensor.hpp"

namespace geosense {

struct BackboneConfig {
  int vocab_size = tok::kVocabSize;
  int d_model = 128;
  int layers = 4;
  int heads = 4;
  int max_len = 256;
  std::uint64_t seed = 7;

  void validate() const;
};

template <typename T>
struct LayerParams {
  Tensor<T> ln1_g, ln1_b;
  Tensor<T> wq, wk, wv, wo;
  Tensor<T> ln2_g, ln2_b;
  Tensor<T> w1, b1, w2, b2;
};

template <typename T>
class Backbone {
 public:
  Backbone() = default;
  explicit Backbone(const BackboneConfig& config);

  const BackboneConfig& config() const { return config_; }

  // logits [len × V]
  Tensor<T> forward(Tape<T>& tape, const AssembledSequence<T>& seq) const;

  // Every trainable tensor, named, in a fixed order.
  std::vector<Tensor<T>*> parameters();
  std::vector<const Tensor<T>*> parameters() const;

  Tensor<T> embedding;  // [V × D]
  Tensor<T> positions;  // [max_len × D]
  std::vector<LayerParams<T>> blocks;
  Tensor<T> lnf_g, lnf_b;

 private:
  BackboneConfig config_;
};

// Softmax probability of the trigger id in one logits row.
template <typename T>
double trigger_confidence(std::span<const T> logits_row);

// Lowest-id argmax of one logits row.
template <typename T>
TokenId argmax_token(std::span<const T> logits_row);

// Greedy decoding: appends up to max_new tokens, stopping after any id in
// `stop` has been emitted (the stop id is part of the output).
template <typename T>
std::vector<TokenId> generate(const Backbone<T>& model, const AssembledSequence<T>& prefix,
                              int max_new, std::span<const TokenId> stop);

template <typename T>
std::vector<TokenId> generate(const Backbone<T>& model, const AssembledSequence<T>& prefix,
                              int max_new);

}  // namespace geosense
