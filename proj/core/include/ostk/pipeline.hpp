#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ostk/blending.hpp"
#include "ostk/imaging.hpp"
#include "ostk/network.hpp"
#include "ostk/styletransfer.hpp"

namespace ostk {

// Shallow per-job replacements of the run-wide settings.
struct JobOverrides {
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<int> iterations;

  friend bool operator==(const JobOverrides&, const JobOverrides&) = default;
};

struct StyleJob {
  std::filesystem::path style;
  std::string selector;
  int feather_radius = 0;
  JobOverrides overrides;

  friend bool operator==(const StyleJob&, const StyleJob&) = default;
};

// One full-image stylization, shared by every job with the same style image
// and effective loss settings.
struct StylizeRun {
  std::filesystem::path style;
  StyleTransferConfig config;
  std::vector<std::size_t> jobs;
};

struct ExecutionPlan {
  std::vector<StylizeRun> runs;
  std::vector<std::size_t> job_run;  // job k is served by runs[job_run[k]]
  std::vector<std::size_t> composite_order;
};

ExecutionPlan plan(const std::vector<StyleJob>& jobs, const StyleTransferConfig& base);

using RunProgress = std::function<void(std::size_t run_index, int iteration, const LossRecord& losses)>;

struct RunOptions {
  StyleTransferConfig style;
  int long_side = 640;
  float conf_threshold = 0.5f;
  float mask_threshold = 0.5f;
  bool skip_unmatched = false;
  int threads = 1;
  // JSON text stored verbatim as the manifest's "config" entry.
  std::string config_snapshot;
  RunProgress progress;
};

struct DetectionRecord {
  std::size_t id = 0;
  std::string class_label;
  float confidence = 0.0f;
  BoundingBox bbox;
};

struct JobRecord {
  std::size_t index = 0;
  std::filesystem::path style;
  std::string selector;
  bool skipped = false;
  std::vector<std::size_t> detections;
  std::size_t run = 0;
  int feather_radius = 0;
  double coverage = 0.0;
  LossRecord initial_loss;
  LossRecord final_loss;
  std::map<std::string, std::string> artifacts;  // role -> file name inside the output directory
};

struct RunManifest {
  std::filesystem::path content;
  std::filesystem::path out_dir;
  Extent extent;
  std::string weights;
  std::uint64_t seed = 0;
  std::vector<DetectionRecord> detections;
  std::vector<JobRecord> jobs;
  std::size_t stylize_runs = 0;
  std::string final_image;
  std::string config_snapshot;
  std::map<std::string, double> timings;  // seconds

  std::string to_json() const;
};

// Applies masked layers to `canvas` in order; later layers win where masks
// overlap.
Image compose_layers(const Image& canvas, const std::vector<std::pair<const Image*, Mask>>& layers);

// Segments once, stylizes once per plan entry and composites jobs in order.
// Selectors are resolved before anything is written: without skip_unmatched
// an empty match throws NoTargetMatched and the output directory is left
// untouched.
RunManifest run(const BackboneModel& model, const std::filesystem::path& content_path,
                const std::vector<StyleJob>& jobs, const RunOptions& options,
                const std::filesystem::path& out_dir);

}  // namespace ostk
