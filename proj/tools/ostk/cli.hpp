#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ostk/network.hpp"
#include "ostk/pipeline.hpp"
#include "ostk/styletransfer.hpp"

namespace ostk::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitInput = 3;
inline constexpr int kExitNoTarget = 4;
inline constexpr int kExitNumeric = 5;

inline constexpr const char* kDefaultWeightsFile = "yolov8x-seg.pt";
inline constexpr const char* kDefaultWeightsUrl =
    "https://github.com/ultralytics/assets/releases/download/v8.2.0/yolov8x-seg.pt";

// Everything a run depends on, merged as defaults < config file < flags.
struct CliConfig {
  std::string command;
  std::filesystem::path content;
  std::filesystem::path out = "out";
  std::filesystem::path weights;
  std::string device = "cpu";
  int size = 640;
  int threads = 1;
  float conf_threshold = 0.5f;
  bool skip_unmatched = false;
  bool fetch_weights = false;
  TapSpec taps;
  StyleTransferConfig style;
  std::vector<StyleJob> jobs;

  friend bool operator==(const CliConfig&, const CliConfig&) = default;
};

// Serialized form shared by the config file and the manifest snapshot.
std::string to_json(const CliConfig& cfg);

// Overlays the keys present in a YAML (or JSON) document onto `cfg`.
// Throws InvalidConfig.
void apply_config_text(CliConfig& cfg, const std::string& text);
void apply_config_file(CliConfig& cfg, const std::filesystem::path& path);

// Parses argv into a merged config. Throws UsageError / InvalidConfig.
CliConfig parse_args(int argc, const char* const* argv);

int exit_code_for(ErrorKind kind) noexcept;

// Resolves the checkpoint path: flag or file, then $OSTK_WEIGHTS, then the
// download cache when fetching is allowed. Throws WeightsNotFound.
std::filesystem::path resolve_weights(const CliConfig& cfg);

// Downloads `url` to `dest` (http or https, redirects followed).
void fetch_file(const std::string& url, const std::filesystem::path& dest);

// Full program entry; diagnostics and progress go to `err`.
int run_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ostk::cli
