#pragma once

#include "diffcap/decoding.hpp"
#include "diffcap/denoiser.hpp"
#include "diffcap/diffusion.hpp"
#include "diffcap/synthdata.hpp"

#include <map>
#include <string>
#include <vector>

namespace diffcap {

/// Documented key and its default.
struct ConfigKey {
  const char* name;
  const char* fallback;
  const char* help;
};

/// Every accepted key. Unknown keys are rejected.
const std::vector<ConfigKey>& config_keys();

/// Flat key=value configuration. Lines starting with '#' are comments.
class RunConfig {
 public:
  RunConfig();  // all defaults

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  /// Sorted key=value lines.
  std::string dump() const;
  /// FNV-1a of dump() without the path keys and stop_at, hex.
  std::string hash() const;

  /// Cross-field checks (K <= T and the like).
  void validate() const;

  TrainConfig train() const;
  /// Model dimensions; the vocabulary size and feature layout come from the grammar.
  DenoiserConfig model(const CaptionGrammar& grammar) const;
  DecodeOptions decode() const;
  CorpusOptions corpus() const;
  CaptionGrammar grammar() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace diffcap
