#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "svr/field.hpp"
#include "svr/losses.hpp"
#include "svr/matching.hpp"

namespace svr {

// Sectioned key=value configuration. One file drives every subcommand;
// command-line flags override file keys.
class Config {
 public:
  static Config parse_file(const std::string& path);
  static Config parse_text(const std::string& text);
  std::string serialize() const;

  bool has(const std::string& section, const std::string& key) const;
  void set(const std::string& section, const std::string& key,
           const std::string& value);
  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key,
                    double fallback) const;
  int get_int(const std::string& section, const std::string& key,
              int fallback) const;
  std::uint64_t get_u64(const std::string& section, const std::string& key,
                        std::uint64_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key,
                bool fallback) const;

  const std::map<std::string, std::map<std::string, std::string>>& sections()
      const {
    return sections_;
  }

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

struct TrainConfig {
  int iterations = 20000;
  int rays_per_batch = 512;  // split between random and matched pixels
  int n_coarse = 48;
  int n_fine = 24;
  int fine_start = 1000;     // iterations before the fine pass kicks in
  int eikonal_points = 256;
  double lr = 5e-4;
  double lr_decay = 0.1;
  double decay_at = 0.8;     // fraction of iterations
  std::uint64_t seed = 1;
  LossWeights weights;
  double epsilon = kDefaultEpsilon;
  double gamma = kDefaultGamma;
  bool use_normal = true;
  bool use_depth = true;
  bool use_reproj = true;
  bool use_epipolar = true;
  bool use_angular = true;
  bool mono_baseline = false;
  FieldArch arch;
  std::string checkpoint_path;  // empty: no checkpoint written by train()
  std::string history_path;     // empty: history kept in memory only

  void validate() const;
  static TrainConfig from_config(const Config& cfg);
  void to_config(Config& cfg) const;
};

// Writes the full default configuration for every subcommand.
Config default_config();

// Run manifest: enough to reproduce a run and compare reruns.
struct RunManifest {
  std::string command;
  Config config;
  std::map<std::string, std::uint64_t> input_hashes;
  std::uint64_t seed = 0;
  int threads = 0;
  std::map<std::string, double> timings_sec;

  void write(const std::string& path) const;
};

}  // namespace svr
