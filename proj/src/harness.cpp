#include "geosense/harness.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include <json.hpp>

#include "geosense/errors.hpp"

namespace geosense {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Config

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("bad value '" + v + "' for key " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean '" + v + "' for key " + key);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  std::function<void(PipelineConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

template <typename N, typename Ref>
Field num_field(Ref ref) {
  return {[ref](PipelineConfig& c, const std::string& k, const std::string& v) {
            ref(c) = parse_number<N>(k, v);
          },
          [ref](const PipelineConfig& c) {
            if constexpr (std::is_floating_point_v<N>) {
              return fmt_double(ref(const_cast<PipelineConfig&>(c)));
            } else {
              return std::to_string(ref(const_cast<PipelineConfig&>(c)));
            }
          }};
}

template <typename Ref>
Field bool_field(Ref ref) {
  return {[ref](PipelineConfig& c, const std::string& k, const std::string& v) {
            ref(c) = parse_bool(k, v);
          },
          [ref](const PipelineConfig& c) {
            return std::string(ref(const_cast<PipelineConfig&>(c)) ? "true" : "false");
          }};
}

#define REF(expr) [](PipelineConfig& c) -> auto& { return c.expr; }

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> f{
      {"seed", num_field<std::uint64_t>(REF(seed))},
      {"world.grid_size", num_field<int>(REF(model.world.grid_size))},
      {"world.max_objects", num_field<int>(REF(model.world.max_objects))},
      {"world.max_phantoms", num_field<int>(REF(model.world.max_phantoms))},
      {"world.vision_dim", num_field<int>(REF(model.world.vision_dim))},
      {"world.geometry_dim", num_field<int>(REF(model.world.geometry_dim))},
      {"world.encoder_seed", num_field<std::uint64_t>(REF(model.world.encoder_seed))},
      {"model.d_model", num_field<int>(REF(model.backbone.d_model))},
      {"model.layers", num_field<int>(REF(model.backbone.layers))},
      {"model.heads", num_field<int>(REF(model.backbone.heads))},
      {"model.max_len", num_field<int>(REF(model.backbone.max_len))},
      {"model.seed", num_field<std::uint64_t>(REF(model.backbone.seed))},
      {"model.projector_seed", num_field<std::uint64_t>(REF(model.projector_seed))},
      {"data.train_total", num_field<int>(REF(train_total))},
      {"data.eval_per_kind", num_field<int>(REF(eval_per_kind))},
      {"data.harmful_share", num_field<double>(REF(harmful_share))},
      {"data.align_share", num_field<double>(REF(align_share))},
      {"align.lr", num_field<double>(REF(align.adam.lr))},
      {"align.warmup_ratio", num_field<double>(REF(align.adam.warmup_ratio))},
      {"align.beta1", num_field<double>(REF(align.adam.beta1))},
      {"align.beta2", num_field<double>(REF(align.adam.beta2))},
      {"align.epsilon", num_field<double>(REF(align.adam.epsilon))},
      {"align.batch_size", num_field<int>(REF(align.batch_size))},
      {"align.epochs", num_field<int>(REF(align.epochs))},
      {"align.source_pure_batches", bool_field(REF(align.source_pure_batches))},
      {"percept.lr", num_field<double>(REF(percept.adam.lr))},
      {"percept.warmup_ratio", num_field<double>(REF(percept.adam.warmup_ratio))},
      {"percept.beta1", num_field<double>(REF(percept.adam.beta1))},
      {"percept.beta2", num_field<double>(REF(percept.adam.beta2))},
      {"percept.epsilon", num_field<double>(REF(percept.adam.epsilon))},
      {"percept.batch_size", num_field<int>(REF(percept.batch_size))},
      {"percept.epochs", num_field<int>(REF(percept.epochs))},
      {"percept.source_pure_batches", bool_field(REF(percept.source_pure_batches))},
      {"curate.max_tt", num_field<int>(REF(mix.max_tt))},
      {"curate.max_tf", num_field<int>(REF(mix.max_tf))},
      {"curate.max_ft", num_field<int>(REF(mix.max_ft))},
      {"infer.max_new_pass1", num_field<int>(REF(max_new_pass1))},
      {"infer.max_new_pass2", num_field<int>(REF(max_new_pass2))},
      {"noise.seed", num_field<std::uint64_t>(REF(noise_seed))},
  };
  return f;
}

#undef REF

}  // namespace

void PipelineConfig::set(const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(*this, key, value);
}

std::map<std::string, std::string> PipelineConfig::to_map() const {
  std::map<std::string, std::string> out;
  for (const auto& [k, f] : fields()) out[k] = f.get(*this);
  return out;
}

std::string PipelineConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : to_map()) out += k + "=" + v + "\n";
  return out;
}

void PipelineConfig::validate() const {
  model.validate();
  align.validate();
  percept.validate();
  if (train_total < 0 || eval_per_kind < 0) throw ConfigError("data counts must be non-negative");
  if (harmful_share < 0 || harmful_share > 1) throw ConfigError("data.harmful_share must lie in [0, 1]");
  if (align_share <= 0 || align_share >= 1) throw ConfigError("data.align_share must lie in (0, 1)");
  if (max_new_pass1 < 1 || max_new_pass2 < 1) throw ConfigError("generation budgets must be >= 1");
}

BenchmarkConfig PipelineConfig::benchmark() const {
  return BenchmarkConfig::with_default_mixture(seed, train_total, eval_per_kind, harmful_share);
}

InferenceOptions PipelineConfig::inference() const {
  InferenceOptions o;
  o.max_new_pass1 = max_new_pass1;
  o.max_new_pass2 = max_new_pass2;
  return o;
}

PipelineConfig parse_config_text(const std::string& text) {
  PipelineConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    }
    c.set(trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  return parse_config_text(read_text_file(path));
}

TrainPools split_train_pools(const std::vector<Scene>& scenes, double align_share) {
  TrainPools pools;
  for (auto kind : kAllTaskKinds) {
    const auto of_kind = filter_scenes(scenes, Split::Train, kind);
    const auto n_align = static_cast<std::size_t>(align_share * static_cast<double>(of_kind.size()));
    for (std::size_t i = 0; i < of_kind.size(); ++i)
      (i < n_align ? pools.align : pools.perception).push_back(of_kind[i]);
  }
  return pools;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::map<std::string, std::string> model_config_map(const ModelConfig& m) {
  PipelineConfig c;
  c.model = m;
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : c.to_map())
    if (k.rfind("world.", 0) == 0 || k.rfind("model.", 0) == 0) out[k] = v;
  return out;
}

void append_le(std::string& out, std::span<const float> data) {
  for (float f : data) {
    auto bits = std::bit_cast<std::uint32_t>(f);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
  }
}

}  // namespace

std::map<std::string, std::uint64_t> tensor_digests(const Model& model) {
  std::map<std::string, std::uint64_t> out;
  for (const auto* t : model.all_tensors()) out[t->name()] = tensor_digest(*t);
  return out;
}

void save_checkpoint(const Model& model, const CheckpointMeta& meta, const std::filesystem::path& path) {
  std::string header = std::string(kCheckpointMagic) + "\n";
  header += "version " + std::to_string(kCheckpointVersion) + "\n";
  for (const auto& [k, v] : model_config_map(model.config())) header += "config " + k + " " + v + "\n";
  header += "seed " + std::to_string(meta.seed) + "\n";
  header += "stage " + (meta.stage.empty() ? std::string("-") : meta.stage) + "\n";
  header += "variant " + (meta.variant.empty() ? std::string("-") : meta.variant) + "\n";
  header += "digest encoder.vision " + hex64(tensor_digest(model.vision_encoder.weights())) + "\n";
  header += "digest encoder.geometry " + hex64(tensor_digest(model.geometry_encoder.weights())) + "\n";

  std::string payload;
  const auto tensors = model.all_tensors();
  header += "tensors " + std::to_string(tensors.size()) + "\n";
  for (const auto* t : tensors) {
    std::string dims;
    for (auto d : t->shape()) dims += (dims.empty() ? "" : "x") + std::to_string(d);
    const auto offset = payload.size();
    append_le(payload, t->data());
    header += "tensor " + t->name() + " " + dims + " " + std::to_string(offset) + " " +
              std::to_string(payload.size() - offset) + "\n";
  }
  header += "payload " + std::to_string(payload.size()) + " " +
            hex64(fnv1a64({reinterpret_cast<const unsigned char*>(payload.data()), payload.size()})) +
            "\n";
  header += "end\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << header << payload;
  if (!out) throw FormatError("failed writing " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_text_file(path);
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw CorruptionError("checkpoint header is truncated");
    auto line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };

  if (bytes.rfind(kCheckpointMagic, 0) != 0) throw FormatError(path.string() + " is not a checkpoint (bad magic)");
  next_line();
  {
    std::istringstream ls(next_line());
    std::string word;
    int version = -1;
    ls >> word >> version;
    if (word != "version") throw CorruptionError("checkpoint header lacks a version line");
    if (version != kCheckpointVersion) {
      throw VersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                         std::to_string(kCheckpointVersion) + ")");
    }
  }

  PipelineConfig cfg;
  CheckpointMeta meta;
  std::map<std::string, std::string> digests;
  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset, nbytes;
  };
  std::vector<Entry> entries;
  std::size_t payload_size = 0;
  std::string payload_digest;
  for (;;) {
    const auto line = next_line();
    if (line == "end") break;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "config") {
      std::string k, v;
      ls >> k >> v;
      cfg.set(k, v);
    } else if (kind == "seed") {
      ls >> meta.seed;
    } else if (kind == "stage") {
      ls >> meta.stage;
    } else if (kind == "variant") {
      ls >> meta.variant;
    } else if (kind == "digest") {
      std::string k, v;
      ls >> k >> v;
      digests[k] = v;
    } else if (kind == "tensors") {
      continue;
    } else if (kind == "tensor") {
      Entry e;
      std::string dims;
      ls >> e.name >> dims >> e.offset >> e.nbytes;
      if (!ls) throw CorruptionError("malformed tensor line: " + line);
      std::istringstream ds(dims);
      std::string d;
      while (std::getline(ds, d, 'x')) e.shape.push_back(parse_number<std::size_t>("shape", d));
      entries.push_back(std::move(e));
    } else if (kind == "payload") {
      ls >> payload_size >> payload_digest;
    } else {
      throw CorruptionError("unknown checkpoint header line: " + line);
    }
  }

  const std::string_view payload(bytes.data() + pos, bytes.size() - pos);
  if (payload.size() != payload_size) {
    throw CorruptionError("checkpoint payload holds " + std::to_string(payload.size()) +
                          " bytes, header declares " + std::to_string(payload_size));
  }
  if (hex64(fnv1a64({reinterpret_cast<const unsigned char*>(payload.data()), payload.size()})) != payload_digest) {
    throw CorruptionError("checkpoint payload digest mismatch");
  }

  LoadedCheckpoint out{Model(cfg.model), meta};
  auto tensors = out.model.all_tensors();
  if (tensors.size() != entries.size()) {
    throw CorruptionError("checkpoint holds " + std::to_string(entries.size()) + " tensors, model expects " +
                          std::to_string(tensors.size()));
  }
  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    auto& t = *tensors[i];
    if (e.name != t.name() || e.shape != t.shape()) {
      throw CorruptionError("tensor " + e.name + " " + shape_str(e.shape) + " does not match model tensor " +
                            t.name() + " " + shape_str(t.shape()));
    }
    if (e.offset != expected_offset || e.nbytes != t.numel() * 4 || e.offset + e.nbytes > payload.size()) {
      throw CorruptionError("tensor " + e.name + " has an inconsistent offset or size");
    }
    auto dst = t.data();
    for (std::size_t j = 0; j < dst.size(); ++j) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[e.offset + 4 * j + b])) << (8 * b);
      dst[j] = std::bit_cast<float>(bits);
    }
    expected_offset += e.nbytes;
  }
  if (digests["encoder.vision"] != hex64(tensor_digest(out.model.vision_encoder.weights())) ||
      digests["encoder.geometry"] != hex64(tensor_digest(out.model.geometry_encoder.weights()))) {
    throw CorruptionError("encoder digests in the header do not match the stored encoder weights");
  }
  if (meta.stage == "-") out.meta.stage.clear();
  if (meta.variant == "-") out.meta.variant.clear();
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

Metrics compute_metrics(const std::vector<InferenceTrace>& traces) {
  if (traces.empty()) throw ContractError("cannot compute metrics over zero traces");
  Metrics m;
  m.policy = traces.front().policy;
  auto add = [](KindMetrics& k, const InferenceTrace& t) {
    ++k.count;
    k.correct += t.correct ? 1 : 0;
    k.triggered += t.triggered ? 1 : 0;
    k.mean_trigger_conf += t.trigger_conf;
    k.mean_trigger_conf_first += t.trigger_conf_first;
    k.tokens += t.total_tokens();
  };
  auto finish = [](KindMetrics& k) {
    if (k.count == 0) return;
    const auto n = static_cast<double>(k.count);
    k.accuracy = static_cast<double>(k.correct) / n;
    k.activation_rate = static_cast<double>(k.triggered) / n;
    k.mean_trigger_conf /= n;
    k.mean_trigger_conf_first /= n;
  };
  for (const auto& t : traces) {
    add(m.per_kind[static_cast<std::size_t>(t.task_kind)], t);
    add(m.overall, t);
  }
  for (auto& k : m.per_kind) finish(k);
  finish(m.overall);
  return m;
}

namespace {

ordered_json kind_json(const KindMetrics& k) {
  ordered_json j;
  j["count"] = k.count;
  j["correct"] = k.correct;
  j["accuracy"] = k.accuracy;
  j["triggered"] = k.triggered;
  j["activation_rate"] = k.activation_rate;
  j["mean_trigger_conf"] = k.mean_trigger_conf;
  j["mean_trigger_conf_first"] = k.mean_trigger_conf_first;
  j["tokens"] = k.tokens;
  return j;
}

ordered_json metrics_json(const Metrics& m) {
  ordered_json j;
  j["policy"] = to_string(m.policy);
  for (auto k : kAllTaskKinds) j[to_string(k)] = kind_json(m.of(k));
  j["overall"] = kind_json(m.overall);
  return j;
}

}  // namespace

std::string metrics_to_json(const Metrics& m) { return metrics_json(m).dump(2); }

EvalResult evaluate(const Model& model, const std::vector<Scene>& scenes, Policy policy,
                    const InferenceOptions& opts) {
  if (scenes.empty()) throw ContractError("evaluate: empty benchmark");
  EvalResult r;
  r.traces.reserve(scenes.size());
  for (const auto& s : scenes) r.traces.push_back(policy_infer(model, s, policy, opts));
  r.metrics = compute_metrics(r.traces);
  return r;
}

void save_traces(const std::filesystem::path& path, const std::vector<InferenceTrace>& traces) {
  std::string out;
  for (const auto& t : traces) out += trace_to_json_line(t) + "\n";
  write_text_file(path, out);
}

std::vector<InferenceTrace> load_traces(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<InferenceTrace> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(trace_from_json_line(line));
  return out;
}

// ---------------------------------------------------------------------------
// Experiments

std::vector<AblationRow> ablation_injection(const Model& adaptive, const Model& fusion,
                                            const Model& never, const std::vector<Scene>& scenes,
                                            const InferenceOptions& opts) {
  std::vector<AblationRow> rows;
  rows.push_back({Policy::Never, "never", evaluate(never, scenes, Policy::Never, opts).metrics});
  rows.push_back({Policy::RigidFusion, "fusion", evaluate(fusion, scenes, Policy::RigidFusion, opts).metrics});
  rows.push_back({Policy::AlwaysIndependent, "adaptive",
                  evaluate(adaptive, scenes, Policy::AlwaysIndependent, opts).metrics});
  rows.push_back({Policy::Adaptive, "adaptive", evaluate(adaptive, scenes, Policy::Adaptive, opts).metrics});
  return rows;
}

std::string ablation_to_json(const std::vector<AblationRow>& rows) {
  ordered_json j = ordered_json::array();
  for (const auto& r : rows) {
    ordered_json row;
    row["policy"] = to_string(r.policy);
    row["model"] = r.model_variant;
    row["injection_pct"] = 100.0 * r.metrics.overall.activation_rate;
    row["metrics"] = metrics_json(r.metrics);
    j.push_back(row);
  }
  return j.dump(2);
}

ConfidenceSummary trigger_confidence_summary(const Model& model, const std::vector<Scene>& scenes,
                                             const InferenceOptions& opts) {
  ConfidenceSummary s;
  for (const auto& sc : scenes) {
    Tape<float> tape(false);
    const auto vision = opts.vision_features ? model.vision_tokens_from_features(tape, *opts.vision_features)
                                             : model.vision_tokens(tape, sc);
    const auto seq = assemble<float>(prompt_tokens(sc, model.config().world), vision, std::nullopt);
    const auto r = read_trigger(model, seq);
    const auto k = static_cast<std::size_t>(sc.task_kind);
    s.path[k] += r.path;
    s.first[k] += r.first;
    ++s.count[k];
  }
  for (std::size_t k = 0; k < 3; ++k) {
    if (s.count[k] == 0) continue;
    s.path[k] /= static_cast<double>(s.count[k]);
    s.first[k] /= static_cast<double>(s.count[k]);
  }
  return s;
}

TriggerStudy trigger_confidence_study(const Model& initial, const Model& aligned, const Model& percept,
                                      const std::vector<Scene>& scenes) {
  return {trigger_confidence_summary(initial, scenes), trigger_confidence_summary(aligned, scenes),
          trigger_confidence_summary(percept, scenes)};
}

std::string trigger_study_to_json(const TriggerStudy& s) {
  ordered_json j;
  auto one = [](const ConfidenceSummary& c) {
    ordered_json o;
    for (auto k : kAllTaskKinds) {
      const auto i = static_cast<std::size_t>(k);
      o[to_string(k)] = {{"count", c.count[i]}, {"path_conf", c.path[i]}, {"first_conf", c.first[i]}};
    }
    return o;
  };
  j["initial"] = one(s.initial);
  j["aligned"] = one(s.aligned);
  j["percept"] = one(s.percept);
  j["uniform_prior"] = 1.0 / tok::kVocabSize;
  return j.dump(2);
}

Tensor<float> noise_features(const WorldConfig& world, std::uint64_t noise_seed, std::uint64_t scene_seed) {
  std::mt19937_64 rng(noise_seed * 0x9E3779B97F4A7C15ull ^ scene_seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  const auto rows = static_cast<std::size_t>(world.vision_tokens());
  const auto cols = static_cast<std::size_t>(world.vision_dim);
  std::vector<float> v(rows * cols);
  for (auto& x : v) x = normal(rng);
  return Tensor<float>({rows, cols}, std::move(v));
}

NoiseControl noise_control(const Model& model, const std::vector<Scene>& scenes, std::uint64_t noise_seed) {
  NoiseControl n;
  for (const auto& sc : scenes) {
    const std::vector<Scene> one{sc};
    const auto real = trigger_confidence_summary(model, one);
    InferenceOptions opts;
    opts.vision_features = noise_features(model.config().world, noise_seed, sc.seed);
    const auto noisy = trigger_confidence_summary(model, one, opts);
    const auto k = static_cast<std::size_t>(sc.task_kind);
    n.mean_real += real.path[k];
    n.mean_noise += noisy.path[k];
    n.mean_real_first += real.first[k];
    n.mean_noise_first += noisy.first[k];
    ++n.scenes;
  }
  if (n.scenes) {
    const auto d = static_cast<double>(n.scenes);
    n.mean_real /= d;
    n.mean_noise /= d;
    n.mean_real_first /= d;
    n.mean_noise_first /= d;
  }
  return n;
}

std::string noise_control_to_json(const NoiseControl& n) {
  ordered_json j;
  j["scenes"] = n.scenes;
  j["mean_conf_real"] = n.mean_real;
  j["mean_conf_noise"] = n.mean_noise;
  j["mean_first_conf_real"] = n.mean_real_first;
  j["mean_first_conf_noise"] = n.mean_noise_first;
  return j.dump(2);
}

std::string build_report(const std::vector<std::filesystem::path>& artifacts) {
  ordered_json j;
  for (const auto& p : artifacts) {
    const auto text = read_text_file(p);
    try {
      j[p.stem().string()] = ordered_json::parse(text);
    } catch (const json::exception& e) {
      throw FormatError("report input " + p.string() + " is not JSON: " + e.what());
    }
  }
  return j.dump(2);
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw FormatError("failed writing " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace geosense
