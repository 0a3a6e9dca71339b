#include "hcl/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "hcl/errors.hpp"
#include "hcl/hash.hpp"
#include "hcl/kv_file.hpp"

namespace hcl {

Method parse_method(const std::string& s) {
  static const std::map<std::string, Method> kNames{
      {"finetune", Method::finetune}, {"kd", Method::kd}, {"kd_qdi", Method::kd_qdi},
      {"kd_buffer", Method::kd_buffer}, {"er", Method::er}, {"di", Method::di}};
  const auto it = kNames.find(s);
  if (it == kNames.end()) throw ConfigError("method: unknown value '" + s + "'");
  return it->second;
}

std::string to_string(Method m) {
  switch (m) {
    case Method::finetune: return "finetune";
    case Method::kd: return "kd";
    case Method::kd_qdi: return "kd_qdi";
    case Method::kd_buffer: return "kd_buffer";
    case Method::er: return "er";
    case Method::di: return "di";
  }
  return "finetune";
}

bool uses_teacher(Method m) {
  return m == Method::kd || m == Method::kd_qdi || m == Method::kd_buffer || m == Method::di;
}
bool uses_buffer(Method m) { return m == Method::kd_buffer || m == Method::er; }
bool uses_synthesis(Method m) { return m == Method::kd_qdi || m == Method::di; }

BufferInsertion parse_buffer_insertion(const std::string& s) {
  if (s == "per_batch") return BufferInsertion::per_batch;
  if (s == "task_end") return BufferInsertion::task_end;
  throw ConfigError("replay.insertion: unknown value '" + s + "'");
}

std::string to_string(BufferInsertion b) {
  return b == BufferInsertion::per_batch ? "per_batch" : "task_end";
}

const std::string& ExperimentConfig::architecture_for(int t) const {
  if (t < 1 || static_cast<std::size_t>(t) > stream.num_tasks) {
    throw ContractViolation("no schedule entry for task " + std::to_string(t));
  }
  return schedule.size() == 1 ? schedule.front() : schedule[static_cast<std::size_t>(t - 1)];
}

void ExperimentConfig::validate() const {
  if (stream.num_tasks == 0) throw ConfigError("stream.num_tasks must be positive");
  if (stream.classes_per_task == 0) throw ConfigError("stream.classes_per_task must be positive");
  if (!(stream.val_fraction > 0.0 && stream.val_fraction < 1.0)) {
    throw ConfigError("stream.val_fraction must lie in (0, 1)");
  }
  if (schedule.empty()) throw ConfigError("schedule must name at least one architecture");
  if (schedule.size() != 1 && schedule.size() != stream.num_tasks) {
    throw ConfigError("schedule: " + std::to_string(schedule.size()) + " entries for " +
                      std::to_string(stream.num_tasks) + " tasks");
  }
  for (const auto& s : schedule) {
    try {
      parse_architecture(s, InputShape{});
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("schedule: ") + e.what());
    } catch (const Error& e) {
      throw ConfigError(std::string("schedule: ") + e.what());
    }
  }
  kd.validate();
  inversion.validate();
  if (!(train.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(train.momentum >= 0.0 && train.momentum < 1.0)) throw ConfigError("train.momentum must lie in [0, 1)");
  if (!(train.weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be non-negative");
  if (train.epochs == 0) throw ConfigError("train.epochs must be positive");
  if (train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (train.warmup_epochs >= train.epochs && train.warmup_epochs > 0) {
    throw ConfigError("train.warmup_epochs must be smaller than train.epochs");
  }
  if (uses_buffer(method)) {
    if (replay.capacity == 0) throw ConfigError("replay.capacity must be positive for method " + to_string(method));
    if (replay.batch_size == 0) throw ConfigError("replay.batch_size must be positive for method " + to_string(method));
  }
  if (eval_modes.empty()) throw ConfigError("eval.modes must name at least one mode");
  if (seeds.empty()) throw ConfigError("seeds must list at least one seed");
}

namespace {

struct Field {
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

[[noreturn]] void bad_value(const std::string& key, const std::string& v, const char* what) {
  throw ConfigError(key + ": expected " + what + ", got '" + v + "'");
}

double to_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc{} || r.ptr != end || !std::isfinite(out)) bad_value(key, v, "a real number");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (v.empty() || r.ec != std::errc{} || r.ptr != end) bad_value(key, v, "a non-negative integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  bad_value(key, v, "true or false");
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

template <typename T>
std::string uint_text(T v) {
  return std::to_string(static_cast<std::uint64_t>(v));
}

// Wraps enum parsers so the error names the key.
template <typename F>
auto keyed(const std::string& key, F parse, const std::string& v) {
  try {
    return parse(v);
  } catch (const ConfigError&) {
    throw ConfigError(key + ": unknown value '" + v + "'");
  }
}

#define REAL_FIELD(KEY, MEMBER)                                                             \
  {                                                                                         \
    KEY, Field {                                                                            \
      [](const ExperimentConfig& c) { return format_real(c.MEMBER); },                      \
          [](ExperimentConfig& c, const std::string& v) { c.MEMBER = to_real(KEY, v); }     \
    }                                                                                       \
  }
#define UINT_FIELD(KEY, MEMBER)                                                             \
  {                                                                                         \
    KEY, Field {                                                                            \
      [](const ExperimentConfig& c) { return uint_text(c.MEMBER); },                        \
          [](ExperimentConfig& c, const std::string& v) {                                   \
            c.MEMBER = static_cast<decltype(c.MEMBER)>(to_uint(KEY, v));                    \
          }                                                                                 \
    }                                                                                       \
  }
#define BOOL_FIELD(KEY, MEMBER)                                                             \
  {                                                                                         \
    KEY, Field {                                                                            \
      [](const ExperimentConfig& c) { return bool_text(c.MEMBER); },                        \
          [](ExperimentConfig& c, const std::string& v) { c.MEMBER = to_bool(KEY, v); }     \
    }                                                                                       \
  }
#define ENUM_FIELD(KEY, MEMBER, PARSE)                                                      \
  {                                                                                         \
    KEY, Field {                                                                            \
      [](const ExperimentConfig& c) { return to_string(c.MEMBER); },                        \
          [](ExperimentConfig& c, const std::string& v) {                                   \
            c.MEMBER = keyed(KEY, [](const std::string& s) { return PARSE(s); }, v);        \
          }                                                                                 \
    }                                                                                       \
  }

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> kFields{
      {"name", Field{[](const ExperimentConfig& c) { return c.name; },
                     [](ExperimentConfig& c, const std::string& v) { c.name = v; }}},
      ENUM_FIELD("method", method, parse_method),
      {"stream.dataset", Field{[](const ExperimentConfig& c) { return c.stream.dataset; },
                               [](ExperimentConfig& c, const std::string& v) { c.stream.dataset = v; }}},
      UINT_FIELD("stream.num_tasks", stream.num_tasks),
      UINT_FIELD("stream.classes_per_task", stream.classes_per_task),
      UINT_FIELD("stream.seed", stream.seed),
      REAL_FIELD("stream.val_fraction", stream.val_fraction),
      UINT_FIELD("stream.train_per_class", stream.train_per_class),
      UINT_FIELD("stream.test_per_class", stream.test_per_class),
      ENUM_FIELD("stream.augment", stream.augment, parse_augment_policy),
      {"schedule", Field{[](const ExperimentConfig& c) { return join_list(c.schedule); },
                         [](ExperimentConfig& c, const std::string& v) {
                           c.schedule.clear();
                           for (const auto& s : split_list(v)) c.schedule.push_back(trim(s));
                         }}},
      REAL_FIELD("kd.psi", kd.psi),
      REAL_FIELD("kd.tau", kd.tau),
      REAL_FIELD("kd.alpha", kd.alpha),
      REAL_FIELD("kd.beta", kd.beta),
      ENUM_FIELD("kd.direction", kd.direction, parse_kl_direction),
      ENUM_FIELD("kd.distance", kd.distance, parse_kd_distance),
      BOOL_FIELD("kd.tau_squared", kd.tau_squared),
      BOOL_FIELD("kd.consistent_views", train.consistent_views),
      UINT_FIELD("inversion.k", inversion.k),
      REAL_FIELD("inversion.lr", inversion.lr),
      REAL_FIELD("inversion.alpha_tv", inversion.alpha_tv),
      REAL_FIELD("inversion.alpha_l2", inversion.alpha_l2),
      REAL_FIELD("inversion.alpha_feature", inversion.alpha_feature),
      ENUM_FIELD("inversion.init_mode", inversion.init_mode, parse_init_mode),
      ENUM_FIELD("inversion.stats_source", inversion.stats_source, parse_stats_source),
      UINT_FIELD("inversion.num_batches", inversion.num_batches),
      UINT_FIELD("replay.capacity", replay.capacity),
      UINT_FIELD("replay.batch_size", replay.batch_size),
      ENUM_FIELD("replay.insertion", replay.insertion, parse_buffer_insertion),
      REAL_FIELD("train.lr", train.lr),
      REAL_FIELD("train.momentum", train.momentum),
      REAL_FIELD("train.weight_decay", train.weight_decay),
      UINT_FIELD("train.epochs", train.epochs),
      UINT_FIELD("train.batch_size", train.batch_size),
      UINT_FIELD("train.warmup_epochs", train.warmup_epochs),
      BOOL_FIELD("train.warm_start", train.warm_start),
      BOOL_FIELD("train.task_identity", train.task_identity),
      {"eval.modes", Field{[](const ExperimentConfig& c) {
                             std::vector<std::string> names;
                             for (auto m : c.eval_modes) names.push_back(to_string(m));
                             return join_list(names);
                           },
                           [](ExperimentConfig& c, const std::string& v) {
                             c.eval_modes.clear();
                             for (const auto& s : split_list(v)) {
                               const auto m = keyed("eval.modes", parse_eval_mode, trim(s));
                               if (std::find(c.eval_modes.begin(), c.eval_modes.end(), m) ==
                                   c.eval_modes.end()) {
                                 c.eval_modes.push_back(m);
                               }
                             }
                           }}},
      {"seeds", Field{[](const ExperimentConfig& c) {
                        std::vector<std::string> s;
                        for (auto v : c.seeds) s.push_back(std::to_string(v));
                        return join_list(s);
                      },
                      [](ExperimentConfig& c, const std::string& v) {
                        c.seeds.clear();
                        for (const auto& s : split_list(v)) c.seeds.push_back(to_uint("seeds", trim(s)));
                      }}},
  };
  return kFields;
}

#undef REAL_FIELD
#undef UINT_FIELD
#undef BOOL_FIELD
#undef ENUM_FIELD

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, const std::string& source) {
  const KeyValueDoc doc = KeyValueDoc::parse(text, source);
  if (!doc.contains("method")) throw ConfigError("method: required key missing in " + source);
  ExperimentConfig cfg;
  const auto& table = fields();
  for (const auto& [key, value] : doc.entries()) {
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError(key + ": unknown key in " + source);
    it->second.set(cfg, value);
  }
  if (cfg.name.empty()) cfg.name = to_string(cfg.method);
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(cfg) + "\n";
  return out;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) { return fnv1a(serialize_config(cfg)); }

}  // namespace hcl
