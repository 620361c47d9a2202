#pragma once

#include "retgen/decoder/moe.hpp"
#include "retgen/generator/grounded_lm.hpp"
#include "retgen/text/synthetic.hpp"
#include "retgen/trainer/backward.hpp"
#include "retgen/trainer/joint.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace retgen {

/// Bad preset name, unknown key or a value of the wrong type. The CLI maps
/// this to a usage error.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Every tunable of a run as flat dotted keys ("train.k", "lsh.bits", ...).
/// A preset fixes the key set and value types; config files and flags can
/// only override existing keys with values of the same type.
class RunConfig {
 public:
  static RunConfig preset(const std::string& name);
  static std::vector<std::string> preset_names() { return {"tiny", "paper-faithful"}; }

  /// Applies a JSON object of dotted keys. `origin` names the source in
  /// error messages.
  void merge(const Json& overrides, const std::string& origin);
  void merge_file(const std::filesystem::path& path);
  /// "key=value"; the value is read as JSON and falls back to a plain string.
  void set(const std::string& assignment);
  void set(const std::string& key, const Json& value);

  const Json& values() const { return values_; }
  const std::string& preset_name() const { return preset_; }

  long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::uint64_t seed() const { return static_cast<std::uint64_t>(get_int("seed")); }

  /// FNV-1a over the canonical dump, without keys that cannot change results
  /// (thread count).
  std::string hash() const;
  /// {"config_hash", "seed", "preset"} for artifact headers.
  Json header() const;

  SyntheticConfig synthetic() const;
  CorpusLimits limits() const;
  GeneratorConfig generator(int vocab_size) const;
  LshConfig lsh() const;
  WarmStartConfig warm_start() const;
  JointConfig joint() const;
  BackwardConfig backward() const;
  DecodeConfig decode() const;

  /// Builds and validates every module config.
  void validate() const;

 private:
  const Json& at(const std::string& key) const;

  std::string preset_;
  Json values_;
};

}  // namespace retgen
