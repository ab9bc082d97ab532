#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cdseg/lunargen.hpp"
#include "cdseg/optim.hpp"
#include "cdseg/segnet.hpp"
#include "cdseg/trainer.hpp"

namespace cdseg {

/// Everything a run can be configured with. Parsed from a plain-text file of
/// `key=value` lines; `#` starts a comment. Unknown keys are rejected.
struct RunConfig {
  TrainConfig train;
  EncoderConfig encoder;
  Modality modality = Modality::kRgb;

  // scene generation
  int width = 96;
  int height = 96;
  std::vector<std::string> presets{"HF", "HR", "LF", "LR"};
  lunar::IntRange craters{2, 5};
  lunar::IntRange rocks{3, 8};
  lunar::RealRange crater_radius{0.8, 2.2};
  lunar::RealRange rock_radius{0.25, 0.7};
  int per_preset = 60;
  int test_per_preset = 15;
  int threads = 1;

  // paths; empty means "take it from the command line"
  std::string data;
  std::string out;

  // Lines of the source file, kept for provenance echoes.
  std::vector<std::string> source_lines;

  std::vector<lunar::SceneSpec> scene_specs() const;
};

/// Key, default value and description of every accepted key.
struct ConfigKey {
  const char* key;
  const char* default_value;
  const char* help;
};
const std::vector<ConfigKey>& config_keys();

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Canonical `key=value` dump of the effective configuration.
std::string format_config(const RunConfig& cfg);

/// Source lines prefixed with "# config: ", then the effective values.
std::string echo_config(const RunConfig& cfg);

}  // namespace cdseg
