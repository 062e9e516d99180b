#pragma once

// Run configuration: a strict `key = value` text format (UTF-8, '#'
// comments). Unknown keys, malformed values, and constraint violations are
// errors naming the offending key. Flag overrides take precedence over the
// file; the effective config echoes back in a canonical, re-parseable form.

#include <string>
#include <vector>

#include "tit/backbone.hpp"
#include "tit/training.hpp"

namespace tit {

struct RunConfig {
  std::string env_id = "cartpole";
  TITConfig tit;
  TrainConfig train;
  std::string out_dir = "runs";
  std::vector<int> seeds = {0};

  // Fills observation and action fields from the environment and validates.
  TITConfig resolved_tit() const;
  std::string echo() const;
};

// `text` is the config file body; `overrides` are extra "key=value" entries
// applied after the file.
RunConfig parse_config(const std::string& text, const std::vector<std::string>& overrides = {});
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});

}  // namespace tit
