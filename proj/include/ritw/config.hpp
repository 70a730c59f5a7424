// Run configuration: one JSON document drives every command. Unknown keys
// are rejected so typos fail loudly, and a seed is mandatory so every run is
// reproducible.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ritw/phase1.hpp"
#include "ritw/phase2.hpp"
#include "ritw/simulator.hpp"

namespace ritw {

struct TruncateConfig {
  double q_lo = 0.0;
  double q_hi = 1.0;
};

struct MsmConfig {
  double l2 = 1e-6;
  int task = 0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  int workers = 0;  // sweep worker pool; 0 = hardware concurrency

  SimConfig sim;
  Phase1Hyper phase1;
  Phase2Hyper phase2;
  TaskSpec tasks = TaskSpec::continuous(1);
  MsmConfig msm;
  std::optional<TruncateConfig> truncate;

  // Optional explicit file locations; empty strings fall back to out_dir
  // defaults (see path()).
  std::string cohort_path;
  std::string randomized_path;
  std::string weights_path;
  std::string iptw_checkpoint_path;
  std::string outcome_checkpoint_path;
  std::string groups_path;

  // Resolved input/output location for a default file name.
  std::string path(const std::string& configured, const std::string& default_name) const;

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& file);
};

// Parses a JSON value that may be a number or a string like "-inf"/"inf".
double json_extended_number(const nlohmann::json& j, const std::string& context);

}  // namespace ritw
