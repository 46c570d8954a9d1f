#include "geosense/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "geosense/errors.hpp"

namespace geosense {

void BackboneConfig::validate() const {
  if (vocab_size < 1 || d_model < 1 || layers < 0 || heads < 1 || max_len < 1) {
    throw ConfigError("backbone dimensions must be positive");
  }
  if (d_model % heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by heads " +
                      std::to_string(heads));
  }
}

namespace {

template <typename T>
Tensor<T> normal_param(std::mt19937_64& rng, std::size_t r, std::size_t c, double stddev,
                       std::string name) {
  std::normal_distribution<double> normal(0.0, stddev);
  std::vector<T> w(r * c);
  for (auto& v : w) v = static_cast<T>(normal(rng));
  Tensor<T> t(c == 0 ? Shape{r} : Shape{r, c}, std::move(w), true);
  t.set_name(std::move(name));
  return t;
}

template <typename T>
Tensor<T> const_param(std::size_t n, T value, std::string name) {
  auto t = Tensor<T>::filled({n}, value, true);
  t.set_name(std::move(name));
  return t;
}

}  // namespace

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& config) : config_(config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto v = static_cast<std::size_t>(config.vocab_size);
  const double s = 0.02;
  // Residual output projections shrink with depth, GPT-2 style.
  const double s_out = s / std::sqrt(2.0 * std::max(1, config.layers));

  embedding = normal_param<T>(rng, v, d, s, "backbone.embedding");
  positions = normal_param<T>(rng, static_cast<std::size_t>(config.max_len), d, s,
                              "backbone.positions");
  for (int l = 0; l < config.layers; ++l) {
    const auto p = "backbone.layer" + std::to_string(l) + ".";
    LayerParams<T> b;
    b.ln1_g = const_param<T>(d, T(1), p + "ln1.g");
    b.ln1_b = const_param<T>(d, T(0), p + "ln1.b");
    b.wq = normal_param<T>(rng, d, d, s, p + "attn.q");
    b.wk = normal_param<T>(rng, d, d, s, p + "attn.k");
    b.wv = normal_param<T>(rng, d, d, s, p + "attn.v");
    b.wo = normal_param<T>(rng, d, d, s_out, p + "attn.o");
    b.ln2_g = const_param<T>(d, T(1), p + "ln2.g");
    b.ln2_b = const_param<T>(d, T(0), p + "ln2.b");
    b.w1 = normal_param<T>(rng, d, 4 * d, s, p + "mlp.w1");
    b.b1 = const_param<T>(4 * d, T(0), p + "mlp.b1");
    b.w2 = normal_param<T>(rng, 4 * d, d, s_out, p + "mlp.w2");
    b.b2 = const_param<T>(d, T(0), p + "mlp.b2");
    blocks.push_back(std::move(b));
  }
  lnf_g = const_param<T>(d, T(1), "backbone.lnf.g");
  lnf_b = const_param<T>(d, T(0), "backbone.lnf.b");
}

template <typename T>
std::vector<Tensor<T>*> Backbone<T>::parameters() {
  std::vector<Tensor<T>*> out{&embedding, &positions};
  for (auto& b : blocks) {
    for (auto* t : {&b.ln1_g, &b.ln1_b, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_g, &b.ln2_b, &b.w1,
                    &b.b1, &b.w2, &b.b2})
      out.push_back(t);
  }
  out.push_back(&lnf_g);
  out.push_back(&lnf_b);
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> Backbone<T>::parameters() const {
  auto mut = const_cast<Backbone*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

template <typename T>
Tensor<T> Backbone<T>::forward(Tape<T>& tape, const AssembledSequence<T>& seq) const {
  const auto len = seq.size();
  if (len == 0) throw ContractError("forward: empty sequence");
  if (len > static_cast<std::size_t>(config_.max_len)) {
    throw CapacityError("sequence length " + std::to_string(len) + " exceeds max_len " +
                        std::to_string(config_.max_len));
  }
  std::vector<std::size_t> ids(len);
  for (std::size_t i = 0; i < len; ++i) {
    const auto id = seq.token_ids[i];
    if (id < 0 || id >= config_.vocab_size) {
      throw DimensionError("forward: token id " + std::to_string(id) + " outside vocabulary");
    }
    ids[i] = static_cast<std::size_t>(id);
  }
  auto x = gather_rows(tape, embedding, std::span<const std::size_t>(ids));
  for (const auto& block : seq.overrides) {
    x = scatter_rows(tape, x, block.rows, std::span<const std::size_t>(block.positions));
  }
  std::vector<std::size_t> pos(len);
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  x = add(tape, x, gather_rows(tape, positions, std::span<const std::size_t>(pos)));

  const auto heads = static_cast<std::size_t>(config_.heads);
  for (const auto& b : blocks) {
    auto h = layer_norm(tape, x, b.ln1_g, b.ln1_b);
    auto a = causal_attention(tape, matmul(tape, h, b.wq), matmul(tape, h, b.wk),
                              matmul(tape, h, b.wv), heads);
    x = add(tape, x, matmul(tape, a, b.wo));
    h = layer_norm(tape, x, b.ln2_g, b.ln2_b);
    h = gelu(tape, add_bias(tape, matmul(tape, h, b.w1), b.b1));
    x = add(tape, x, add_bias(tape, matmul(tape, h, b.w2), b.b2));
  }
  x = layer_norm(tape, x, lnf_g, lnf_b);
  return matmul_transposed(tape, x, embedding);
}

template <typename T>
double trigger_confidence(std::span<const T> logits_row) {
  if (logits_row.size() <= static_cast<std::size_t>(tok::kTrigger)) {
    throw DimensionError("trigger_confidence: logits row shorter than the vocabulary");
  }
  double mx = -INFINITY;
  for (auto v : logits_row) mx = std::max(mx, static_cast<double>(v));
  double z = 0.0;
  for (auto v : logits_row) z += std::exp(static_cast<double>(v) - mx);
  return std::exp(static_cast<double>(logits_row[tok::kTrigger]) - mx) / z;
}

template <typename T>
TokenId argmax_token(std::span<const T> logits_row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < logits_row.size(); ++j)
    if (logits_row[j] > logits_row[best]) best = j;
  return static_cast<TokenId>(best);
}

template <typename T>
std::vector<TokenId> generate(const Backbone<T>& model, const AssembledSequence<T>& prefix,
                              int max_new, std::span<const TokenId> stop) {
  if (prefix.size() + static_cast<std::size_t>(std::max(0, max_new)) >
      static_cast<std::size_t>(model.config().max_len) + 1) {
    throw CapacityError("generate: no room for " + std::to_string(max_new) + " new tokens after " +
                        std::to_string(prefix.size()) + " (max_len " +
                        std::to_string(model.config().max_len) + ")");
  }
  auto seq = prefix;
  std::vector<TokenId> out;
  for (int step = 0; step < max_new; ++step) {
    Tape<T> tape(false);
    auto logits = model.forward(tape, seq);
    const auto v = logits.cols();
    const auto row = logits.data().subspan((seq.size() - 1) * v, v);
    const TokenId next = argmax_token<T>(row);
    out.push_back(next);
    if (std::find(stop.begin(), stop.end(), next) != stop.end()) break;
    // Pushed raw: an untrained model may emit placeholder ids, which then
    // simply use their table embedding.
    seq.token_ids.push_back(next);
    seq.segments.push_back(segments_from_tokens(std::span<const TokenId>(&next, 1)).front());
  }
  return out;
}

template <typename T>
std::vector<TokenId> generate(const Backbone<T>& model, const AssembledSequence<T>& prefix,
                              int max_new) {
  static constexpr TokenId kStop[] = {tok::kEos};
  return generate(model, prefix, max_new, std::span<const TokenId>(kStop));
}

#define GEOSENSE_INSTANTIATE(T)                                                                   \
  template class Backbone<T>;                                                                     \
  template double trigger_confidence<T>(std::span<const T>);                                      \
  template TokenId argmax_token<T>(std::span<const T>);                                           \
  template std::vector<TokenId> generate(const Backbone<T>&, const AssembledSequence<T>&, int,    \
                                         std::span<const TokenId>);                               \
  template std::vector<TokenId> generate(const Backbone<T>&, const AssembledSequence<T>&, int);

GEOSENSE_INSTANTIATE(float)
GEOSENSE_INSTANTIATE(double)

#undef GEOSENSE_INSTANTIATE

}  // namespace geosense
