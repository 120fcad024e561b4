#include "aslora/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "json.hpp"

namespace aslora {

namespace {

enum class FieldType { Int, Real, Bool, Text, RealList, OptionalReal, Seed };

struct Field {
  const char* name;
  FieldType type;
  std::function<void(ExperimentConfig&, const std::string& field, const std::string& value)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt_real(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

double parse_real(const std::string& field, const std::string& text) {
  const std::string t = trim(text);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) throw ConfigError(field, "expected a number, got '" + t + "'");
  if (!std::isfinite(v)) throw ConfigError(field, "value must be finite");
  return v;
}

long long parse_integer(const std::string& field, const std::string& text) {
  const double v = parse_real(field, text);
  if (v != std::floor(v) || std::fabs(v) > 9.0e15) throw ConfigError(field, "expected an integer, got '" + trim(text) + "'");
  return static_cast<long long>(v);
}

int parse_int(const std::string& field, const std::string& text) {
  const long long v = parse_integer(field, text);
  if (v < -2147483647LL || v > 2147483647LL) throw ConfigError(field, "integer out of range");
  return static_cast<int>(v);
}

std::uint64_t parse_seed(const std::string& field, const std::string& text) {
  const std::string t = trim(text);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) throw ConfigError(field, "expected an unsigned integer, got '" + t + "'");
  return v;
}

bool parse_bool(const std::string& field, const std::string& text) {
  std::string t = trim(text);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError(field, "expected a boolean, got '" + t + "'");
}

std::vector<double> parse_list(const std::string& field, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_real(field, item));
  if (out.empty()) throw ConfigError(field, "expected a comma-separated list of numbers");
  return out;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += fmt_real(v[i]);
  }
  return s;
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

template <typename E, std::size_t N>
E parse_enum(const std::string& field, const std::string& text, const EnumName<E> (&names)[N]) {
  const std::string t = trim(text);
  for (const auto& n : names) {
    if (t == n.name) return n.value;
  }
  std::string allowed;
  for (const auto& n : names) allowed += std::string(allowed.empty() ? "" : "|") + n.name;
  throw ConfigError(field, "unknown value '" + t + "' (expected " + allowed + ")");
}

template <typename E, std::size_t N>
std::string enum_name(E v, const EnumName<E> (&names)[N]) {
  for (const auto& n : names) {
    if (n.value == v) return n.name;
  }
  return "?";
}

constexpr EnumName<StrategyKind> kStrategies[] = {
    {StrategyKind::FedLoRA, "FedLoRA"},     {StrategyKind::FFA_LoRA, "FFA_LoRA"},
    {StrategyKind::RoLoRA, "RoLoRA"},       {StrategyKind::FixedSchedule, "FixedSchedule"},
    {StrategyKind::AS_LoRA, "AS_LoRA"},     {StrategyKind::UniformRandom, "UniformRandom"}};
constexpr EnumName<scoring::EstimatorKind> kEstimators[] = {{scoring::EstimatorKind::GradNorm, "GradNorm"},
                                                            {scoring::EstimatorKind::HVP, "HVP"},
                                                            {scoring::EstimatorKind::FD, "FD"}};
constexpr EnumName<scoring::CurvatureSchedule> kSchedules[] = {{scoring::CurvatureSchedule::EveryRound, "every_round"},
                                                               {scoring::CurvatureSchedule::Periodic, "periodic"},
                                                               {scoring::CurvatureSchedule::LatePhase, "late_phase"}};
constexpr EnumName<selection::Granularity> kGranularities[] = {
    {selection::Granularity::PerLayerShared, "per_layer_shared"},
    {selection::Granularity::Global, "global"},
    {selection::Granularity::PerClient, "per_client"}};
constexpr EnumName<selection::AggregationRule> kRules[] = {{selection::AggregationRule::UniformAvg, "uniform_avg"},
                                                           {selection::AggregationRule::WeightedAvg, "weighted_avg"},
                                                           {selection::AggregationRule::MajorityVote, "majority_vote"}};
constexpr EnumName<selection::Policy> kPolicies[] = {{selection::Policy::SoftmaxSample, "softmax_sample"},
                                                     {selection::Policy::Argmax, "argmax"}};
constexpr EnumName<dp::SmoothingMethod> kSmoothing[] = {{dp::SmoothingMethod::None, "none"},
                                                        {dp::SmoothingMethod::Gaussian5Tap, "gaussian5tap"},
                                                        {dp::SmoothingMethod::Laplacian, "laplacian"},
                                                        {dp::SmoothingMethod::Ema, "ema"}};

#define ASLORA_INT(NAME, MEMBER)                                                                            \
  Field {                                                                                                   \
    NAME, FieldType::Int, [](ExperimentConfig& c, const std::string& f, const std::string& v) { c.MEMBER = parse_int(f, v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.MEMBER); }                                  \
  }
#define ASLORA_REAL(NAME, MEMBER)                                                                           \
  Field {                                                                                                   \
    NAME, FieldType::Real, [](ExperimentConfig& c, const std::string& f, const std::string& v) { c.MEMBER = parse_real(f, v); }, \
        [](const ExperimentConfig& c) { return fmt_real(c.MEMBER); }                                        \
  }
#define ASLORA_BOOL(NAME, MEMBER)                                                                           \
  Field {                                                                                                   \
    NAME, FieldType::Bool, [](ExperimentConfig& c, const std::string& f, const std::string& v) { c.MEMBER = parse_bool(f, v); }, \
        [](const ExperimentConfig& c) { return fmt_bool(c.MEMBER); }                                        \
  }
#define ASLORA_ENUM(NAME, MEMBER, TABLE)                                                                    \
  Field {                                                                                                   \
    NAME, FieldType::Text,                                                                                  \
        [](ExperimentConfig& c, const std::string& f, const std::string& v) { c.MEMBER = parse_enum(f, v, TABLE); }, \
        [](const ExperimentConfig& c) { return enum_name(c.MEMBER, TABLE); }                                \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      ASLORA_INT("task.N", task.num_layers),
      ASLORA_INT("task.d_in", task.d_in),
      ASLORA_INT("task.d_out", task.d_out),
      ASLORA_INT("task.r", task.rank),
      ASLORA_REAL("task.alpha_scale", task.alpha_scale),
      ASLORA_INT("task.m", task.num_samples),
      Field{"task.delta0_targets", FieldType::RealList,
            [](ExperimentConfig& c, const std::string& f, const std::string& v) { c.task.delta0_targets = parse_list(f, v); },
            [](const ExperimentConfig& c) { return join(c.task.delta0_targets); }},
      ASLORA_BOOL("task.delta0_relative", task.delta0_relative),
      ASLORA_REAL("task.label_noise", task.label_noise),
      ASLORA_BOOL("task.whiten_inputs", task.whiten_inputs),
      Field{"task.seed", FieldType::Seed,
            [](ExperimentConfig& c, const std::string& f, const std::string& v) { c.seed = parse_seed(f, v); },
            [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
      ASLORA_BOOL("dp.enabled", dp.enabled),
      ASLORA_REAL("dp.clip_norm", dp.clip_norm),
      ASLORA_REAL("dp.noise_multiplier", dp.noise_multiplier),
      ASLORA_REAL("dp.sampling_rate", dp.sampling_rate),
      ASLORA_REAL("dp.delta", dp.delta),
      Field{"dp.target_epsilon", FieldType::OptionalReal,
            [](ExperimentConfig& c, const std::string& f, const std::string& v) {
              if (trim(v).empty() || trim(v) == "none") {
                c.target_epsilon.reset();
              } else {
                c.target_epsilon = parse_real(f, v);
              }
            },
            [](const ExperimentConfig& c) { return c.target_epsilon ? fmt_real(*c.target_epsilon) : std::string("none"); }},
      ASLORA_ENUM("strategy.kind", strategy.kind, kStrategies),
      Field{"strategy.pattern", FieldType::Text,
            [](ExperimentConfig& c, const std::string&, const std::string& v) { c.strategy.pattern = trim(v); },
            [](const ExperimentConfig& c) { return c.strategy.pattern; }},
      ASLORA_ENUM("strategy.estimator", strategy.estimator.kind, kEstimators),
      ASLORA_REAL("strategy.fd_epsilon", strategy.estimator.fd_epsilon),
      ASLORA_BOOL("strategy.fd_one_sided", strategy.estimator.fd_one_sided),
      ASLORA_REAL("strategy.eta", strategy.estimator.eta),
      ASLORA_ENUM("strategy.schedule", strategy.estimator.schedule, kSchedules),
      ASLORA_INT("strategy.period", strategy.estimator.period),
      ASLORA_INT("strategy.late_start", strategy.estimator.late_start),
      ASLORA_BOOL("strategy.projection", strategy.projection),
      ASLORA_BOOL("strategy.scores_from_noised", strategy.scores_from_noised),
      ASLORA_REAL("selection.ema_coef", selection.ema_coef),
      ASLORA_REAL("selection.T0", selection.T0),
      ASLORA_REAL("selection.T_min", selection.T_min),
      ASLORA_REAL("selection.gamma", selection.gamma),
      ASLORA_INT("selection.warmup_rounds", warmup_rounds),
      ASLORA_REAL("selection.warmup_ratio", warmup_ratio),
      ASLORA_ENUM("selection.granularity", selection.granularity, kGranularities),
      ASLORA_ENUM("selection.rule", selection.rule, kRules),
      ASLORA_ENUM("selection.policy", selection.policy, kPolicies),
      ASLORA_INT("federation.K", federation.K),
      ASLORA_INT("federation.T", federation.T),
      ASLORA_INT("federation.tau", federation.tau),
      ASLORA_REAL("federation.eta", federation.eta),
      ASLORA_REAL("federation.partition_alpha", federation.partition_alpha),
      ASLORA_BOOL("federation.two_pass", federation.two_pass),
      ASLORA_ENUM("federation.smoothing", federation.smoothing.method, kSmoothing),
      ASLORA_REAL("federation.laplacian_sigma", federation.smoothing.laplacian_sigma),
      ASLORA_REAL("federation.smoothing_coef", federation.smoothing.ema_coef),
      ASLORA_BOOL("federation.parallel_clients", federation.parallel_clients),
      Field{"output.dir", FieldType::Text,
            [](ExperimentConfig& c, const std::string&, const std::string& v) { c.output.dir = trim(v); },
            [](const ExperimentConfig& c) { return c.output.dir; }},
      Field{"output.prefix", FieldType::Text,
            [](ExperimentConfig& c, const std::string&, const std::string& v) { c.output.prefix = trim(v); },
            [](const ExperimentConfig& c) { return c.output.prefix; }},
  };
  return table;
}

#undef ASLORA_INT
#undef ASLORA_REAL
#undef ASLORA_BOOL
#undef ASLORA_ENUM

const Field& find_field(const std::string& name) {
  for (const auto& f : fields()) {
    if (name == f.name) return f;
  }
  throw ConfigError(name, "unknown configuration key");
}

ExperimentConfig apply(const std::vector<std::pair<std::string, std::string>>& entries) {
  ExperimentConfig c;
  for (const auto& [key, value] : entries) find_field(key).set(c, key, value);
  c.validate();
  return c;
}

}  // namespace

std::string to_string(StrategyKind kind) { return enum_name(kind, kStrategies); }

int ExperimentConfig::resolved_warmup() const {
  if (warmup_rounds >= 0) return warmup_rounds;
  return static_cast<int>(std::ceil(warmup_ratio * federation.T - 1e-9));
}

void ExperimentConfig::validate() const {
  if (task.num_layers < 1) throw ConfigError("task.N", "must be >= 1");
  if (task.d_in < 1) throw ConfigError("task.d_in", "must be >= 1");
  if (task.d_out < 1) throw ConfigError("task.d_out", "must be >= 1");
  if (task.rank < 1 || task.rank >= std::min(task.d_in, task.d_out)) throw ConfigError("task.r", "must satisfy 1 <= r < min(d_in, d_out)");
  if (!(task.alpha_scale > 0.0)) throw ConfigError("task.alpha_scale", "must be > 0");
  if (task.num_samples < task.d_in) throw ConfigError("task.m", "must be >= d_in");
  if (task.delta0_targets.size() != 1 && task.delta0_targets.size() != static_cast<std::size_t>(task.num_layers)) {
    throw ConfigError("task.delta0_targets", "needs 1 or N entries");
  }
  for (double d : task.delta0_targets) {
    if (d < 0.0) throw ConfigError("task.delta0_targets", "entries must be >= 0");
    if (task.delta0_relative && d > 1.0) throw ConfigError("task.delta0_targets", "relative entries must be <= 1");
  }
  if (task.label_noise < 0.0) throw ConfigError("task.label_noise", "must be >= 0");
  if (!(dp.clip_norm > 0.0)) throw ConfigError("dp.clip_norm", "must be > 0");
  if (!(dp.noise_multiplier >= 0.0)) throw ConfigError("dp.noise_multiplier", "must be >= 0");
  if (!(dp.sampling_rate > 0.0 && dp.sampling_rate <= 1.0)) throw ConfigError("dp.sampling_rate", "must be in (0, 1]");
  if (!(dp.delta > 0.0 && dp.delta < 1.0)) throw ConfigError("dp.delta", "must be in (0, 1)");
  if (target_epsilon && !(*target_epsilon > 0.0)) throw ConfigError("dp.target_epsilon", "must be > 0");
  if (strategy.kind == StrategyKind::FixedSchedule) {
    if (strategy.pattern.empty()) throw ConfigError("strategy.pattern", "must be non-empty");
    for (char ch : strategy.pattern) {
      if (ch != 'A' && ch != 'B') throw ConfigError("strategy.pattern", "letters must be A or B");
    }
  }
  if (!(strategy.estimator.fd_epsilon > 0.0)) throw ConfigError("strategy.fd_epsilon", "must be > 0");
  if (!(strategy.estimator.eta >= 0.0)) throw ConfigError("strategy.eta", "must be >= 0");
  if (strategy.estimator.period < 1) throw ConfigError("strategy.period", "must be >= 1");
  if (strategy.estimator.late_start < 0) throw ConfigError("strategy.late_start", "must be >= 0");
  if (!(selection.ema_coef > 0.0 && selection.ema_coef < 1.0)) throw ConfigError("selection.ema_coef", "must be in (0, 1)");
  if (!(selection.T_min > 0.0)) throw ConfigError("selection.T_min", "must be > 0");
  if (!(selection.T0 >= selection.T_min)) throw ConfigError("selection.T0", "must be >= T_min");
  if (!(selection.gamma > 0.0 && selection.gamma < 1.0)) throw ConfigError("selection.gamma", "must be in (0, 1)");
  if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) throw ConfigError("selection.warmup_ratio", "must be in [0, 1]");
  if (warmup_rounds < -1) throw ConfigError("selection.warmup_rounds", "must be >= 0 (or -1 to derive from warmup_ratio)");
  if (federation.K < 1) throw ConfigError("federation.K", "must be >= 1");
  if (federation.K > task.num_samples) throw ConfigError("federation.K", "must not exceed task.m");
  if (federation.T < 0) throw ConfigError("federation.T", "must be >= 0");
  if (federation.tau < 0) throw ConfigError("federation.tau", "must be >= 0");
  if (!(federation.eta > 0.0)) throw ConfigError("federation.eta", "must be > 0");
  if (!(federation.partition_alpha > 0.0)) throw ConfigError("federation.partition_alpha", "must be > 0");
  if (!(federation.smoothing.laplacian_sigma > 0.0)) throw ConfigError("federation.laplacian_sigma", "must be > 0");
  if (!(federation.smoothing.ema_coef > 0.0 && federation.smoothing.ema_coef < 1.0)) {
    throw ConfigError("federation.smoothing_coef", "must be in (0, 1)");
  }
  if (output.prefix.empty()) throw ConfigError("output.prefix", "must be non-empty");
}

ExperimentConfig parse_config_ini(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::stringstream ss(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(ss, raw)) {
    ++line_no;
    std::string line = raw;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("", "line " + std::to_string(line_no) + ": malformed section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("", "line " + std::to_string(line_no) + ": expected key = value");
    if (section.empty()) throw ConfigError("", "line " + std::to_string(line_no) + ": key outside of a section");
    entries.emplace_back(section + "." + trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1)));
  }
  return apply(entries);
}

ExperimentConfig parse_config_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("", std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("", "JSON config must be an object of sections");
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& [section, body] : doc.items()) {
    if (!body.is_object()) throw ConfigError(section, "section must be an object");
    for (const auto& [key, value] : body.items()) {
      std::string v;
      if (value.is_string()) {
        v = value.get<std::string>();
      } else if (value.is_boolean()) {
        v = value.get<bool>() ? "true" : "false";
      } else if (value.is_null()) {
        v = "none";
      } else if (value.is_array()) {
        for (std::size_t i = 0; i < value.size(); ++i) v += (i ? "," : "") + value[i].dump();
      } else {
        v = value.dump();
      }
      entries.emplace_back(section + "." + key, v);
    }
  }
  return apply(entries);
}

ExperimentConfig parse_config(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') return parse_config_json(text);
  return parse_config_ini(text);
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_ini(const ExperimentConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    const std::string name = f.name;
    const auto dot = name.find('.');
    const std::string sec = name.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out += '\n';
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += name.substr(dot + 1) + " = " + f.get(config) + "\n";
  }
  return out;
}

std::string to_json(const ExperimentConfig& config) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  for (const auto& f : fields()) {
    const std::string name = f.name;
    const auto dot = name.find('.');
    auto& slot = doc[name.substr(0, dot)][name.substr(dot + 1)];
    const std::string v = f.get(config);
    switch (f.type) {
      case FieldType::Int:
        slot = parse_int(name, v);
        break;
      case FieldType::Seed:
        slot = config.seed;
        break;
      case FieldType::Real:
        slot = parse_real(name, v);
        break;
      case FieldType::Bool:
        slot = parse_bool(name, v);
        break;
      case FieldType::Text:
        slot = v;
        break;
      case FieldType::RealList:
        slot = config.task.delta0_targets;
        break;
      case FieldType::OptionalReal:
        if (config.target_epsilon) {
          slot = *config.target_epsilon;
        } else {
          slot = nullptr;
        }
        break;
    }
  }
  return doc.dump(2);
}

void set_numeric_field(ExperimentConfig& config, const std::string& name, double value) {
  const Field& f = find_field(name);
  if (f.type != FieldType::Int && f.type != FieldType::Real && f.type != FieldType::Seed && f.type != FieldType::OptionalReal) {
    throw ConfigError(name, "not a numeric field");
  }
  f.set(config, name, f.type == FieldType::Seed ? std::to_string(static_cast<std::uint64_t>(value)) : fmt_real(value));
  config.validate();
}

}  // namespace aslora
