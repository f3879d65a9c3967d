#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ossd/selftrain.hpp"
#include "ossd/synthdata.hpp"

namespace ossd {

// Everything a simulate/sweep run needs. `seed` seeds both the scenario and
// the training streams.
struct RunSpec {
  ScenarioConfig scenario;
  SelfTrainConfig train;

  friend bool operator==(const RunSpec&, const RunSpec&) = default;
};

// Config grammar: one `key = value` per line; `#` starts a comment; blank
// lines ignored. Unknown keys and malformed values throw ConfigError naming
// the key (and line, when parsing text).
void apply_setting(RunSpec& spec, const std::string& key, const std::string& value);
void apply_config_text(RunSpec& spec, std::istream& in);
RunSpec load_config(const std::filesystem::path& path);

// "key=value" override as given on the command line.
void apply_override(RunSpec& spec, const std::string& assignment);

// Every accepted key, in documentation order.
std::vector<std::string> config_keys();

// Resolved configuration in the same grammar; parsing it back reproduces spec.
std::string dump_config(const RunSpec& spec);

}  // namespace ossd
