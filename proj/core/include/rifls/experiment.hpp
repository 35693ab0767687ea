#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rifls/eval.hpp"
#include "rifls/sim.hpp"
#include "rifls/smoother.hpp"

namespace rifls {

inline constexpr const char* kToolVersion = "0.1.0";

struct ExperimentConfig {
  sim::SimConfig sim;
  // Shared smoother settings; presets and per-method overrides apply on top.
  // IMU noise, camera and pixel sigma always come from `sim`.
  SmootherConfig smoother = default_smoother();
  std::vector<eval::Method> methods;
  int n_trials = 25;
  std::uint64_t seed0 = 1;
  double initial_velocity_sigma = 0.05;
  double trailing_window = 10.0;
  int trace_frames = 50;
  std::string output_dir = "out";

  static SmootherConfig default_smoother();
};

// Method names: fls-traditional, fls-traditional-fej, ri-fls, ri-fls-exact,
// ri-fls-smart.
std::vector<std::string> preset_names();
SmootherConfig preset(const std::string& name, const SmootherConfig& base);

// Defaults with every preset as a method.
ExperimentConfig default_experiment();

// Strict: unknown keys and wrong types raise InvalidConfig.
ExperimentConfig parse_experiment(const std::string& text);
ExperimentConfig load_experiment(const std::filesystem::path& path);
std::string experiment_to_json(const ExperimentConfig& c);

// FNV-1a over the canonical serialization.
std::uint64_t config_hash(const ExperimentConfig& c);
std::string hash_hex(std::uint64_t h);

// The configured method of that name, or the preset of that name.
eval::Method find_method(const ExperimentConfig& c, const std::string& name);

// Copies the sim's IMU noise, camera and pixel sigma into a smoother config.
SmootherConfig bind_sensors(SmootherConfig s, const sim::SimConfig& sim);

void write_manifest(const std::filesystem::path& dir, const ExperimentConfig& c,
                    const std::string& command, std::uint64_t seed);

}  // namespace rifls
