#include "geosense/model.hpp"

#include "geosense/errors.hpp"

namespace geosense {

void ModelConfig::validate() const {
  world.validate();
  backbone.validate();
  if (backbone.vocab_size != tok::kVocabSize) {
    throw ConfigError("backbone vocab_size must equal the closed vocabulary size " +
                      std::to_string(tok::kVocabSize));
  }
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t h) {
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

template <typename T>
std::uint64_t tensor_digest(const Tensor<T>& t) {
  const auto d = t.data();
  return fnv1a64({reinterpret_cast<const unsigned char*>(d.data()), d.size_bytes()});
}

template <typename T>
GeoSenseModel<T>::GeoSenseModel(const ModelConfig& config)
    : vision_encoder(config.world),
      geometry_encoder(config.world),
      projectors(Projectors<T>::init(config.world.vision_dim, config.world.geometry_dim,
                                     config.backbone.d_model, config.projector_seed)),
      backbone(config.backbone),
      config_(config) {
  config.validate();
}

template <typename T>
Tensor<T> GeoSenseModel<T>::vision_tokens(Tape<T>& tape, const Scene& scene) const {
  return project(tape, vision_encoder.encode(tape, scene), projectors);
}

template <typename T>
Tensor<T> GeoSenseModel<T>::vision_tokens_from_features(Tape<T>& tape,
                                                        const Tensor<T>& features) const {
  return project(tape, FeatureSeq<T>{features, Channel::Vision}, projectors);
}

template <typename T>
Tensor<T> GeoSenseModel<T>::geometry_tokens(Tape<T>& tape, const Scene& scene) const {
  ++geometry_encoder_calls_;
  auto f = geometry_encoder.encode(tape, scene);
  ++projector_3d_calls_;
  return project(tape, f, projectors);
}

template <typename T>
std::vector<Tensor<T>*> GeoSenseModel<T>::trainable() {
  auto out = backbone.parameters();
  out.push_back(&projectors.w2d);
  out.push_back(&projectors.w3d);
  return out;
}

template <typename T>
std::vector<Tensor<T>*> GeoSenseModel<T>::all_tensors() {
  auto out = trainable();
  out.push_back(&vision_encoder.weights());
  out.push_back(&geometry_encoder.weights());
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> GeoSenseModel<T>::all_tensors() const {
  auto mut = const_cast<GeoSenseModel*>(this)->all_tensors();
  return {mut.begin(), mut.end()};
}

template <typename T>
GeoSenseModel<T> GeoSenseModel<T>::clone() const {
  GeoSenseModel copy = *this;
  auto dst = copy.all_tensors();
  const auto src = all_tensors();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    *dst[i] = src[i]->clone();
    dst[i]->set_name(src[i]->name());
  }
  copy.reset_call_counts();
  return copy;
}

std::vector<TokenId> prompt_tokens(const Scene& scene, const WorldConfig& world) {
  std::vector<TokenId> ids{tok::kBos};
  ids.insert(ids.end(), scene.query.begin(), scene.query.end());
  ids.insert(ids.end(), static_cast<std::size_t>(world.vision_tokens()), tok::kVisionPad);
  ids.push_back(tok::kTurnSep);
  return ids;
}

template std::uint64_t tensor_digest(const Tensor<float>&);
template std::uint64_t tensor_digest(const Tensor<double>&);
template class GeoSenseModel<float>;
template class GeoSenseModel<double>;

}  // namespace geosense
