#include "ossd/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "ossd/errors.hpp"
#include "ossd/io.hpp"

namespace ossd {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double to_real(const std::string& key, const std::string& value) {
  const auto v = parse_real(value);
  if (!v || std::isnan(*v)) throw ConfigError("config key '" + key + "': not a number: '" + value + "'");
  return *v;
}

long long to_integer(const std::string& key, const std::string& value) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("config key '" + key + "': not an integer: '" + value + "'");
  }
  return v;
}

int to_int(const std::string& key, const std::string& value) {
  const long long v = to_integer(key, value);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw ConfigError("config key '" + key + "': out of range");
  }
  return static_cast<int>(v);
}

struct Field {
  std::string key;
  std::function<void(RunSpec&, const std::string&)> set;
  std::function<std::string(const RunSpec&)> get;
};

Field int_field(std::string key, int ScenarioConfig::*member) {
  return {key, [key, member](RunSpec& s, const std::string& v) { s.scenario.*member = to_int(key, v); },
          [member](const RunSpec& s) { return std::to_string(s.scenario.*member); }};
}

Field real_field(std::string key, double ScenarioConfig::*member) {
  return {key, [key, member](RunSpec& s, const std::string& v) { s.scenario.*member = to_real(key, v); },
          [member](const RunSpec& s) { return format_real(s.scenario.*member); }};
}

Field int_field(std::string key, int SelfTrainConfig::*member) {
  return {key, [key, member](RunSpec& s, const std::string& v) { s.train.*member = to_int(key, v); },
          [member](const RunSpec& s) { return std::to_string(s.train.*member); }};
}

Field real_field(std::string key, double SelfTrainConfig::*member) {
  return {key, [key, member](RunSpec& s, const std::string& v) { s.train.*member = to_real(key, v); },
          [member](const RunSpec& s) { return format_real(s.train.*member); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(int_field("d", &ScenarioConfig::d));
    f.push_back(int_field("K", &ScenarioConfig::K));
    f.push_back(int_field("M", &ScenarioConfig::M));
    f.push_back(real_field("mean_radius", &ScenarioConfig::mean_radius));
    f.push_back(real_field("class_spread", &ScenarioConfig::class_spread));
    f.push_back(real_field("background_box", &ScenarioConfig::background_box));
    f.push_back(int_field("n_labeled_bags", &ScenarioConfig::n_labeled_bags));
    f.push_back(int_field("n_unlabeled_pure_id", &ScenarioConfig::n_unlabeled_pure_id));
    f.push_back(int_field("n_unlabeled_mixed", &ScenarioConfig::n_unlabeled_mixed));
    f.push_back(int_field("n_unlabeled_pure_ood", &ScenarioConfig::n_unlabeled_pure_ood));
    f.push_back(int_field("bag_size_min", &ScenarioConfig::bag_size_min));
    f.push_back(int_field("bag_size_max", &ScenarioConfig::bag_size_max));
    f.push_back(int_field("n_test_per_class", &ScenarioConfig::n_test_per_class));
    f.push_back(int_field("n_probe", &ScenarioConfig::n_probe));

    f.push_back(real_field("lambda_unsup", &SelfTrainConfig::lambda_unsup));
    f.push_back(real_field("tau_conf", &SelfTrainConfig::tau_conf));
    f.push_back({"delta_ood",
                 [](RunSpec& s, const std::string& v) {
                   if (v == "auto") {
                     s.train.delta_ood = DeltaOod{};
                   } else if (v == "auto-TNR95") {
                     s.train.delta_ood = {DeltaOod::Rule::CalibratedTnr95, 0.0};
                   } else {
                     s.train.delta_ood = DeltaOod::fixed(to_real("delta_ood", v));
                   }
                 },
                 [](const RunSpec& s) -> std::string {
                   switch (s.train.delta_ood.rule) {
                     case DeltaOod::Rule::Auto: return "auto";
                     case DeltaOod::Rule::CalibratedTnr95: return "auto-TNR95";
                     case DeltaOod::Rule::Fixed: break;
                   }
                   return format_real(s.train.delta_ood.value);
                 }});
    f.push_back(real_field("alpha", &SelfTrainConfig::alpha));
    f.push_back(real_field("lambda_ood", &SelfTrainConfig::lambda_ood));
    f.push_back(real_field("eta", &SelfTrainConfig::eta));
    f.push_back(real_field("momentum", &SelfTrainConfig::momentum));
    f.push_back(int_field("iters_supervised", &SelfTrainConfig::iters_supervised));
    f.push_back(int_field("iters_ood", &SelfTrainConfig::iters_ood));
    f.push_back(int_field("iters_ssod", &SelfTrainConfig::iters_ssod));
    f.push_back(int_field("batch_labeled", &SelfTrainConfig::batch_labeled));
    f.push_back(int_field("batch_unlabeled", &SelfTrainConfig::batch_unlabeled));
    f.push_back(int_field("checkpoint_every", &SelfTrainConfig::checkpoint_every));
    f.push_back(real_field("sigma_aug", &SelfTrainConfig::sigma_aug));
    f.push_back({"score_kind",
                 [](RunSpec& s, const std::string& v) {
                   s.train.score_kind = parse_score_kind(v, s.train.score_kind.temperature);
                 },
                 [](const RunSpec& s) { return to_string(s.train.score_kind.id); }});
    f.push_back({"energy_temperature",
                 [](RunSpec& s, const std::string& v) {
                   s.train.score_kind.temperature = to_real("energy_temperature", v);
                 },
                 [](const RunSpec& s) { return format_real(s.train.score_kind.temperature); }});
    f.push_back(int_field("hidden_width", &SelfTrainConfig::hidden_width));
    f.push_back(real_field("init_scale", &SelfTrainConfig::init_scale));
    f.push_back(real_field("shrinkage", &SelfTrainConfig::shrinkage));
    f.push_back({"feature_source",
                 [](RunSpec& s, const std::string& v) {
                   if (v == "hidden") {
                     s.train.feature_source = FeatureSource::Hidden;
                   } else if (v == "raw") {
                     s.train.feature_source = FeatureSource::Raw;
                   } else {
                     throw ConfigError("config key 'feature_source': expected hidden or raw, got '" + v + "'");
                   }
                 },
                 [](const RunSpec& s) -> std::string {
                   return s.train.feature_source == FeatureSource::Hidden ? "hidden" : "raw";
                 }});
    f.push_back({"entropy_scope",
                 [](RunSpec& s, const std::string& v) {
                   if (v == "all") {
                     s.train.entropy_foreground_only = false;
                   } else if (v == "foreground") {
                     s.train.entropy_foreground_only = true;
                   } else {
                     throw ConfigError("config key 'entropy_scope': expected all or foreground, got '" + v + "'");
                   }
                 },
                 [](const RunSpec& s) -> std::string { return s.train.entropy_foreground_only ? "foreground" : "all"; }});
    f.push_back(int_field("n_background", &SelfTrainConfig::n_background));
    f.push_back({"seed",
                 [](RunSpec& s, const std::string& v) {
                   const long long seed = to_integer("seed", v);
                   if (seed < 0) throw ConfigError("config key 'seed': must be >= 0");
                   s.train.seed = static_cast<std::uint64_t>(seed);
                 },
                 [](const RunSpec& s) { return std::to_string(s.train.seed); }});
    return f;
  }();
  return table;
}

}  // namespace

void apply_setting(RunSpec& spec, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(spec, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_override(RunSpec& spec, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  apply_setting(spec, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void apply_config_text(RunSpec& spec, std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    try {
      apply_setting(spec, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

RunSpec load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  RunSpec spec;
  apply_config_text(spec, in);
  return spec;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

std::string dump_config(const RunSpec& spec) {
  std::ostringstream out;
  for (const auto& f : fields()) out << f.key << " = " << f.get(spec) << '\n';
  return out.str();
}

}  // namespace ossd
