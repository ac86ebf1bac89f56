#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "fence/evaluate.hpp"
#include "fence/inference.hpp"
#include "fence/simulate.hpp"

namespace fence {

/// Flat `key = value` text with `#` comments and blank lines.
class KeyValueConfig {
public:
  struct Entry {
    std::string value;
    long line = 0;
  };

  static KeyValueConfig parse(std::string_view text);
  static KeyValueConfig load(const std::filesystem::path& path);

  const std::map<std::string, Entry>& entries() const { return entries_; }
  bool contains(const std::string& key) const { return entries_.count(key) != 0; }

private:
  std::map<std::string, Entry> entries_;
};

/// Everything a command can be configured with.
struct RunConfig {
  DgpConfig dgp;
  ChainConfig chain;
  StudyConfig study;
  double threshold = 0.5;
  std::uint64_t seed = 1;

  /// Propagates `seed` into the generator, chain and study.
  void set_seed(std::uint64_t s);
};

/// Applies every entry on top of `base`. Unknown keys and unparsable values throw ParseError
/// carrying the line number.
RunConfig apply_config(const KeyValueConfig& kv, RunConfig base = {});

/// Flat `key = value` rendering of a configuration (used in manifests).
std::map<std::string, std::string> config_snapshot(const RunConfig& cfg);

}  // namespace fence
