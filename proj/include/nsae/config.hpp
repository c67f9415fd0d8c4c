#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nsae/harness.hpp"

namespace nsae {

/// Episodic-protocol settings; k_shots lists the K sweep (one report each).
struct ProtocolConfig {
  int n_way = 5;
  std::vector<int> k_shots = {5};
  int q_queries = 15;
  int episodes = 100;
  bool transductive = true;
};

/// Synthetic-benchmark generation settings.
struct DataConfig {
  int image_size = 32;
  int source_images_per_class = 30;
  int target_images_per_class = 25;
  std::uint64_t source_seed = 1, target_seed = 2;
};

/// The full run configuration; a strict mirror of the JSON config file.
struct RunConfig {
  std::string profile = "fast32";
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string out = "out";
  DataConfig data;
  // train (only the knobs the pipeline exposes)
  TrainConfig train;
  LossConfig loss;
  ProtocolConfig protocol;
  NoiseConfig noise;
  std::string target = "strong";  // mild | strong, the evaluation target
  std::vector<std::string> variants = {"baseline", "SAE", "SAE*", "NSAE(-)",
                                       "NSAE"};
  std::vector<std::string> combos = {"CE+CE", "BSR+CE", "CE+D", "BSR+D"};

  void validate() const;
};

/// Strict JSON parsing: any unknown key anywhere raises ConfigError.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

/// Canonical (sorted-key) JSON echo of the configuration.
std::string config_echo_json(const RunConfig& cfg);
/// FNV-1a hash of the canonical echo, in hex.
std::string config_hash(const RunConfig& cfg);
/// Writes the echo plus its hash to <dir>/config_echo.json.
void write_config_echo(const RunConfig& cfg, const std::string& dir);

/// Assembles the harness settings (profile, train, loss, eval) for one K.
HarnessConfig harness_config(const RunConfig& cfg, int k_shot);

Dataset make_source(const RunConfig& cfg);
Dataset make_target(const RunConfig& cfg, TargetShift shift);

}  // namespace nsae
