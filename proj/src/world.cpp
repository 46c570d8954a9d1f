#include "geosense/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "geosense/errors.hpp"

namespace geosense {

using nlohmann::json;

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::GeoRequired: return "GEO_REQUIRED";
    case TaskKind::GeoHarmful: return "GEO_HARMFUL";
    case TaskKind::GeoNeutral: return "GEO_NEUTRAL";
  }
  return "?";
}

std::string to_string(Split split) { return split == Split::Train ? "train" : "eval"; }

TaskKind parse_task_kind(std::string_view s) {
  for (auto k : kAllTaskKinds)
    if (to_string(k) == s) return k;
  throw FormatError("unknown task kind '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "eval") return Split::Eval;
  throw FormatError("unknown split '" + std::string(s) + "'");
}

int WorldConfig::vision_channels() const {
  return slots() + tok::kNumShapes + tok::kNumColors + 2 * grid_size;
}

int WorldConfig::geometry_channels() const {
  // slot, row, col, two depth channels, entity-count one-hot
  return slots() + 2 * grid_size + 2 + (slots() + 1);
}

void WorldConfig::validate() const {
  if (grid_size < 2) throw ConfigError("grid_size must be >= 2");
  if (max_objects < 2 || max_objects > tok::kNumObjectIds) {
    throw ConfigError("max_objects must lie in [2, " + std::to_string(tok::kNumObjectIds) + "]");
  }
  if (max_phantoms < 1) throw ConfigError("max_phantoms must be >= 1");
  if (slots() + 1 > tok::kNumNumbers + 1 && max_objects >= tok::kNumNumbers) {
    throw ConfigError("max_objects exceeds the number vocabulary");
  }
  if (vision_dim < 1 || geometry_dim < 1) throw ConfigError("feature widths must be positive");
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, TaskKind kind) {
  // splitmix64 finalizer over the pair
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(kind) + 1;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// k depths in (0, 1], pairwise separated by kDepthMargin, uniformly over the
// feasible set, in random order.
std::vector<double> separated_depths(std::mt19937_64& rng, int k) {
  const double slack = 1.0 - kDepthMargin * (k - 1);
  std::uniform_real_distribution<double> u(0.0, slack);
  std::vector<double> y(static_cast<std::size_t>(k));
  for (auto& v : y) v = u(rng);
  std::sort(y.begin(), y.end());
  std::vector<double> d(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) d[i] = 1.0 - (y[i] + kDepthMargin * static_cast<double>(i));
  std::shuffle(d.begin(), d.end(), rng);
  return d;
}

}  // namespace

Scene generate_scene(std::uint64_t seed, TaskKind kind, const WorldConfig& config) {
  config.validate();
  std::mt19937_64 rng(mix_seed(seed, kind));
  const int cells = config.grid_size * config.grid_size;

  Scene scene;
  scene.seed = seed;
  scene.task_kind = kind;

  const int background = uniform_int(rng, 0, tok::kNumBackgrounds - 1);
  int n_objects = 0;
  int n_phantoms = 0;
  switch (kind) {
    case TaskKind::GeoRequired:
      n_objects = uniform_int(rng, 2, std::min(config.max_objects, cells));
      break;
    case TaskKind::GeoNeutral:
      n_objects = uniform_int(rng, 1, std::min(config.max_objects, cells));
      break;
    case TaskKind::GeoHarmful:
      n_objects = uniform_int(rng, 1, std::min(config.max_objects, cells - 1));
      n_phantoms = uniform_int(rng, 1, std::min(config.max_phantoms, cells - n_objects));
      break;
  }

  std::vector<int> cell_order(static_cast<std::size_t>(cells));
  std::iota(cell_order.begin(), cell_order.end(), 0);
  std::shuffle(cell_order.begin(), cell_order.end(), rng);
  const auto depths = separated_depths(rng, n_objects + n_phantoms);

  auto make_entity = [&](int index) {
    SceneObject o;
    o.shape_id = uniform_int(rng, 0, tok::kNumShapes - 1);
    o.color_id = uniform_int(rng, 0, tok::kNumColors - 1);
    o.row = cell_order[static_cast<std::size_t>(index)] / config.grid_size;
    o.col = cell_order[static_cast<std::size_t>(index)] % config.grid_size;
    o.depth = depths[static_cast<std::size_t>(index)];
    return o;
  };
  for (int i = 0; i < n_objects; ++i) scene.objects.push_back(make_entity(i));
  for (int i = 0; i < n_phantoms; ++i) scene.phantom_objects.push_back(make_entity(n_objects + i));

  const TokenId bg = tok::background(background);
  switch (kind) {
    case TaskKind::GeoRequired: {
      const bool nearest = uniform_int(rng, 0, 1) == 0;
      scene.query = {bg, tok::kWhich, nearest ? tok::kNearest : tok::kFarthest};
      break;
    }
    case TaskKind::GeoHarmful:
      scene.query = {bg, tok::kCount};
      break;
    case TaskKind::GeoNeutral: {
      const int sub = uniform_int(rng, 0, 2);
      if (sub == 2) {
        scene.query = {bg, tok::kCount};
      } else {
        const int k = uniform_int(rng, 0, n_objects - 1);
        scene.query = {bg, sub == 0 ? tok::kColor : tok::kShape, tok::object(k)};
      }
      break;
    }
  }
  scene.answer = recompute_answer(scene);
  return scene;
}

Scene generate_scene(std::uint64_t seed, TaskKind kind, int grid_size) {
  WorldConfig config;
  config.grid_size = grid_size;
  return generate_scene(seed, kind, config);
}

std::vector<TokenId> recompute_answer(const Scene& scene) {
  if (scene.query.size() < 2) throw FormatError("scene query too short");
  const TokenId op = scene.query[1];
  if (op == tok::kWhich) {
    const bool nearest = scene.query.at(2) == tok::kNearest;
    std::size_t best = 0;
    for (std::size_t i = 1; i < scene.objects.size(); ++i) {
      const bool better = nearest ? scene.objects[i].depth < scene.objects[best].depth
                                  : scene.objects[i].depth > scene.objects[best].depth;
      if (better) best = i;
    }
    return {tok::object(static_cast<int>(best))};
  }
  if (op == tok::kCount) return {tok::number(static_cast<int>(scene.objects.size()))};
  const int k = scene.query.at(2) - tok::kObject0;
  const auto& o = scene.objects.at(static_cast<std::size_t>(k));
  if (op == tok::kColor) return {tok::color(o.color_id)};
  if (op == tok::kShape) return {tok::shape(o.shape_id)};
  throw FormatError("unrecognized query operator " + Vocab::name(op));
}

// ---------------------------------------------------------------------------
// Encoders

std::vector<double> vision_channels(const Scene& scene, const WorldConfig& config) {
  const int width = config.vision_channels();
  std::vector<double> x(static_cast<std::size_t>(config.vision_tokens() * width), 0.0);
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const auto& o = scene.objects[i];
    double* row = x.data() + i * static_cast<std::size_t>(width);
    int c = 0;
    row[c + static_cast<int>(i)] = 1.0;
    c += config.slots();
    row[c + o.shape_id] = 1.0;
    c += tok::kNumShapes;
    row[c + o.color_id] = 1.0;
    c += tok::kNumColors;
    row[c + o.row] = 1.0;
    c += config.grid_size;
    row[c + o.col] = 1.0;
  }
  return x;
}

std::vector<double> geometry_channels(const Scene& scene, const WorldConfig& config) {
  const int width = config.geometry_channels();
  std::vector<double> x(static_cast<std::size_t>(config.geometry_tokens() * width), 0.0);
  const auto entities = scene.objects.size() + scene.phantom_objects.size();
  for (std::size_t i = 0; i < entities; ++i) {
    const auto& o = i < scene.objects.size() ? scene.objects[i]
                                             : scene.phantom_objects[i - scene.objects.size()];
    double* row = x.data() + i * static_cast<std::size_t>(width);
    int c = 0;
    row[c + static_cast<int>(i)] = 1.0;
    c += config.slots();
    row[c + o.row] = 1.0;
    c += config.grid_size;
    row[c + o.col] = 1.0;
    c += config.grid_size;
    row[c] = 2.0 * o.depth;
    row[c + 1] = 2.0 * (1.0 - o.depth);
    c += 2;
    row[c + static_cast<int>(entities)] = 1.0;
  }
  return x;
}

namespace {

template <typename T>
Tensor<T> random_encoder_weights(std::uint64_t seed, int in, int out, double stddev) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, stddev);
  std::vector<T> w(static_cast<std::size_t>(in * out));
  for (auto& v : w) v = static_cast<T>(normal(rng));
  return Tensor<T>({static_cast<std::size_t>(in), static_cast<std::size_t>(out)}, std::move(w));
}

template <typename T>
Tensor<T> channel_tensor(const std::vector<double>& x, int rows, int cols) {
  std::vector<T> v(x.begin(), x.end());
  return Tensor<T>({static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)}, std::move(v));
}

}  // namespace

template <typename T>
VisionEncoder<T>::VisionEncoder(const WorldConfig& config)
    : config_(config),
      weights_(random_encoder_weights<T>(config.encoder_seed, config.vision_channels(),
                                         config.vision_dim, 0.6)) {
  weights_.set_name("encoder.vision");
}

template <typename T>
FeatureSeq<T> VisionEncoder<T>::encode(Tape<T>& tape, const Scene& scene) const {
  auto x = channel_tensor<T>(vision_channels(scene, config_), config_.vision_tokens(),
                             config_.vision_channels());
  return {tanh(tape, matmul(tape, x, weights_)), Channel::Vision};
}

template <typename T>
GeometryEncoder<T>::GeometryEncoder(const WorldConfig& config)
    : config_(config),
      weights_(random_encoder_weights<T>(config.encoder_seed ^ 0xA5A5A5A5ull,
                                         config.geometry_channels(), config.geometry_dim, 0.6)) {
  weights_.set_name("encoder.geometry");
}

template <typename T>
FeatureSeq<T> GeometryEncoder<T>::encode(Tape<T>& tape, const Scene& scene) const {
  auto x = channel_tensor<T>(geometry_channels(scene, config_), config_.geometry_tokens(),
                             config_.geometry_channels());
  return {tanh(tape, matmul(tape, x, weights_)), Channel::Geometry};
}

template class VisionEncoder<float>;
template class VisionEncoder<double>;
template class GeometryEncoder<float>;
template class GeometryEncoder<double>;

// ---------------------------------------------------------------------------
// Benchmark

BenchmarkConfig BenchmarkConfig::with_default_mixture(std::uint64_t seed, int train_total,
                                                      int eval_per_kind, double harmful_share) {
  BenchmarkConfig c;
  c.seed = seed;
  const int spatial = static_cast<int>(std::lround(kSpatialShare * train_total));
  const int general = train_total - spatial;
  const int harmful = static_cast<int>(std::lround(harmful_share * general));
  c.train_counts = {spatial, harmful, general - harmful};
  c.eval_counts = {eval_per_kind, eval_per_kind, eval_per_kind};
  return c;
}

std::vector<Scene> make_benchmark(const BenchmarkConfig& config, const WorldConfig& world) {
  int total = 0;
  for (int i = 0; i < 3; ++i) {
    if (config.train_counts[static_cast<std::size_t>(i)] < 0 ||
        config.eval_counts[static_cast<std::size_t>(i)] < 0) {
      throw ConfigError("benchmark counts must be non-negative");
    }
    total += config.train_counts[static_cast<std::size_t>(i)] +
             config.eval_counts[static_cast<std::size_t>(i)];
  }
  if (total == 0) throw ConfigError("benchmark requests zero scenes");

  // Scene seeds: train from [base, base + 2^32), eval from [base + 2^32, ...).
  constexpr std::uint64_t kEvalOffset = 1ull << 32;
  const std::uint64_t base = config.seed << 34;
  std::vector<Scene> scenes;
  scenes.reserve(static_cast<std::size_t>(total));
  for (auto split : {Split::Train, Split::Eval}) {
    std::uint64_t next = base + (split == Split::Eval ? kEvalOffset : 0);
    const auto& counts = split == Split::Train ? config.train_counts : config.eval_counts;
    for (std::size_t k = 0; k < kAllTaskKinds.size(); ++k) {
      for (int i = 0; i < counts[k]; ++i) {
        auto s = generate_scene(next++, kAllTaskKinds[k], world);
        s.split = split;
        scenes.push_back(std::move(s));
      }
    }
  }
  return scenes;
}

namespace {

json objects_to_json(const std::vector<SceneObject>& objects) {
  json arr = json::array();
  for (const auto& o : objects) {
    arr.push_back({{"shape_id", o.shape_id},
                   {"color_id", o.color_id},
                   {"cell", {o.row, o.col}},
                   {"depth", o.depth}});
  }
  return arr;
}

std::vector<SceneObject> objects_from_json(const json& arr) {
  std::vector<SceneObject> out;
  for (const auto& j : arr) {
    SceneObject o;
    o.shape_id = j.at("shape_id").get<int>();
    o.color_id = j.at("color_id").get<int>();
    o.row = j.at("cell").at(0).get<int>();
    o.col = j.at("cell").at(1).get<int>();
    o.depth = j.at("depth").get<double>();
    out.push_back(o);
  }
  return out;
}

}  // namespace

std::string scene_to_json_line(const Scene& scene) {
  json j;
  j["seed"] = scene.seed;
  j["task_kind"] = to_string(scene.task_kind);
  j["split"] = to_string(scene.split);
  j["objects"] = objects_to_json(scene.objects);
  j["phantom_objects"] = objects_to_json(scene.phantom_objects);
  j["query_tokens"] = scene.query;
  j["answer_tokens"] = scene.answer;
  return j.dump();
}

Scene scene_from_json_line(const std::string& line) {
  try {
    const auto j = json::parse(line);
    Scene s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.task_kind = parse_task_kind(j.at("task_kind").get<std::string>());
    s.split = parse_split(j.at("split").get<std::string>());
    s.objects = objects_from_json(j.at("objects"));
    s.phantom_objects = objects_from_json(j.at("phantom_objects"));
    s.query = j.at("query_tokens").get<std::vector<TokenId>>();
    s.answer = j.at("answer_tokens").get<std::vector<TokenId>>();
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed scene record: ") + e.what());
  }
}

void save_scenes(const std::filesystem::path& path, const std::vector<Scene>& scenes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  for (const auto& s : scenes) out << scene_to_json_line(s) << '\n';
}

std::vector<Scene> load_scenes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<Scene> scenes;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    scenes.push_back(scene_from_json_line(line));
  }
  return scenes;
}

std::vector<Scene> filter_scenes(const std::vector<Scene>& scenes, std::optional<Split> split,
                                 std::optional<TaskKind> kind) {
  std::vector<Scene> out;
  for (const auto& s : scenes) {
    if (split && s.split != *split) continue;
    if (kind && s.task_kind != *kind) continue;
    out.push_back(s);
  }
  return out;
}

}  // namespace geosense
