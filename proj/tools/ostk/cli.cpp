#include "cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <ATen/Parallel.h>
#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "log.hpp"
#include "ostk/blending.hpp"
#include "ostk/error.hpp"

#ifndef OSTK_VERSION
#define OSTK_VERSION "0.0.0"
#endif

namespace ostk::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_json(const CliConfig& cfg) {
  json style{{"alpha", cfg.style.alpha},
             {"beta", cfg.style.beta},
             {"iterations", cfg.style.iterations},
             {"step_size", cfg.style.step_size},
             {"init", std::string(to_string(cfg.style.init_mode))},
             {"log_every", cfg.style.log_every},
             {"content_layer", cfg.taps.content_layer},
             {"style_layers", cfg.taps.style_layers}};
  json weights = json::object();
  for (const auto& [layer, w] : cfg.style.layer_weights) weights[std::to_string(layer)] = w;
  style["layer_weights"] = std::move(weights);

  json jobs = json::array();
  for (const auto& job : cfg.jobs) {
    json j{{"style", job.style.string()}, {"target", job.selector}, {"feather", job.feather_radius}};
    if (job.overrides.alpha) j["alpha"] = *job.overrides.alpha;
    if (job.overrides.beta) j["beta"] = *job.overrides.beta;
    if (job.overrides.iterations) j["iterations"] = *job.overrides.iterations;
    jobs.push_back(std::move(j));
  }

  json root{{"content", cfg.content.string()},
            {"out", cfg.out.string()},
            {"weights", cfg.weights.string()},
            {"device", cfg.device},
            {"size", cfg.size},
            {"seed", cfg.style.seed},
            {"threads", cfg.threads},
            {"conf_threshold", cfg.conf_threshold},
            {"skip_unmatched", cfg.skip_unmatched},
            {"fetch_weights", cfg.fetch_weights},
            {"style", std::move(style)},
            {"jobs", std::move(jobs)}};
  return root.dump(2);
}

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorKind::InvalidConfig, msg); }

template <typename T>
T scalar(const YAML::Node& node, const std::string& key) {
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    config_error("key '" + key + "' has the wrong type");
  }
}

void check_keys(const YAML::Node& node, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!node.IsMap()) config_error(where + " must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      config_error("unknown key '" + key + "' in " + where);
    }
  }
}

}  // namespace

void apply_config_text(CliConfig& cfg, const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    config_error(std::string("cannot parse config: ") + e.what());
  }
  if (root.IsNull()) return;
  check_keys(root,
             {"content", "out", "weights", "device", "size", "seed", "threads", "conf_threshold", "skip_unmatched",
              "fetch_weights", "style", "jobs"},
             "config");

  if (root["content"]) cfg.content = scalar<std::string>(root["content"], "content");
  if (root["out"]) cfg.out = scalar<std::string>(root["out"], "out");
  if (root["weights"]) cfg.weights = scalar<std::string>(root["weights"], "weights");
  if (root["device"]) cfg.device = scalar<std::string>(root["device"], "device");
  if (root["size"]) cfg.size = scalar<int>(root["size"], "size");
  if (root["seed"]) cfg.style.seed = scalar<std::uint64_t>(root["seed"], "seed");
  if (root["threads"]) cfg.threads = scalar<int>(root["threads"], "threads");
  if (root["conf_threshold"]) cfg.conf_threshold = scalar<float>(root["conf_threshold"], "conf_threshold");
  if (root["skip_unmatched"]) cfg.skip_unmatched = scalar<bool>(root["skip_unmatched"], "skip_unmatched");
  if (root["fetch_weights"]) cfg.fetch_weights = scalar<bool>(root["fetch_weights"], "fetch_weights");

  if (const auto s = root["style"]) {
    check_keys(s,
               {"alpha", "beta", "iterations", "step_size", "init", "log_every", "content_layer", "style_layers",
                "layer_weights"},
               "style");
    if (s["alpha"]) cfg.style.alpha = scalar<double>(s["alpha"], "style.alpha");
    if (s["beta"]) cfg.style.beta = scalar<double>(s["beta"], "style.beta");
    if (s["iterations"]) cfg.style.iterations = scalar<int>(s["iterations"], "style.iterations");
    if (s["step_size"]) cfg.style.step_size = scalar<double>(s["step_size"], "style.step_size");
    if (s["init"]) cfg.style.init_mode = parse_init_mode(scalar<std::string>(s["init"], "style.init"));
    if (s["log_every"]) cfg.style.log_every = scalar<int>(s["log_every"], "style.log_every");
    if (s["content_layer"]) cfg.taps.content_layer = scalar<int>(s["content_layer"], "style.content_layer");
    if (s["style_layers"]) cfg.taps.style_layers = scalar<std::vector<int>>(s["style_layers"], "style.style_layers");
    if (const auto w = s["layer_weights"]) {
      if (!w.IsMap()) config_error("style.layer_weights must be a mapping");
      cfg.style.layer_weights.clear();
      for (const auto& kv : w) {
        cfg.style.layer_weights[scalar<int>(kv.first, "style.layer_weights")] =
            scalar<double>(kv.second, "style.layer_weights");
      }
    }
  }

  if (const auto jobs = root["jobs"]) {
    if (!jobs.IsSequence()) config_error("jobs must be a list");
    cfg.jobs.clear();
    for (const auto& j : jobs) {
      check_keys(j, {"style", "target", "feather", "alpha", "beta", "iterations"}, "jobs");
      if (!j["style"] || !j["target"]) config_error("every job needs 'style' and 'target'");
      StyleJob job;
      job.style = scalar<std::string>(j["style"], "jobs.style");
      job.selector = scalar<std::string>(j["target"], "jobs.target");
      if (j["feather"]) job.feather_radius = scalar<int>(j["feather"], "jobs.feather");
      if (j["alpha"]) job.overrides.alpha = scalar<double>(j["alpha"], "jobs.alpha");
      if (j["beta"]) job.overrides.beta = scalar<double>(j["beta"], "jobs.beta");
      if (j["iterations"]) job.overrides.iterations = scalar<int>(j["iterations"], "jobs.iterations");
      cfg.jobs.push_back(std::move(job));
    }
  }
}

void apply_config_file(CliConfig& cfg, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::FileNotFound, "config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str());
}

namespace {

struct Flags {
  std::string content, out, weights, config, device, init;
  std::vector<std::string> styles, targets;
  double alpha = 0, beta = 0, step = 0;
  int iters = 0, size = 0, threads = 0, feather = 0, log_every = 0;
  std::uint64_t seed = 0;
  float conf = 0;
  bool skip_unmatched = false, fetch_weights = false;
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--content", f.content, "Content image (PNG or JPEG)");
  sub->add_option("--out", f.out, "Output directory");
  sub->add_option("--weights", f.weights, "Segmentation checkpoint (.pt)");
  sub->add_option("--config", f.config, "YAML config file");
  sub->add_option("--size", f.size, "Long side of the working resolution before stride rounding");
  sub->add_option("--threads", f.threads, "Worker threads; 1 is deterministic");
  sub->add_option("--conf-threshold", f.conf, "Detection confidence threshold");
  sub->add_option("--device", f.device, "cpu or accelerator")->check(CLI::IsMember({"cpu", "accelerator"}));
  sub->add_flag("--fetch-weights", f.fetch_weights, "Download the default checkpoint when none is found");
}

void add_stylize(CLI::App* sub, Flags& f) {
  sub->add_option("--style", f.styles, "Style image; repeat once per job");
  sub->add_option("--target", f.targets, "Target selector (class, index or class:ordinal); pairs with --style");
  sub->add_option("--alpha", f.alpha, "Content weight");
  sub->add_option("--beta", f.beta, "Style weight");
  sub->add_option("--iters", f.iters, "Optimizer iterations");
  sub->add_option("--step", f.step, "Optimizer step size");
  sub->add_option("--seed", f.seed, "Seed for noise initialisation");
  sub->add_option("--feather", f.feather, "Mask feather radius in pixels (all jobs)");
  sub->add_option("--init", f.init, "Pastiche initialisation")->check(CLI::IsMember({"content", "noise"}));
  sub->add_option("--log-every", f.log_every, "Progress log interval (iterations)");
  sub->add_flag("--skip-unmatched", f.skip_unmatched, "Skip jobs whose selector matches nothing");
}

bool given(const CLI::App* sub, const std::string& name) {
  const auto* opt = sub->get_option_no_throw(name);
  return opt != nullptr && opt->count() > 0;
}

[[noreturn]] void usage(const std::string& msg) { throw Error(ErrorKind::UsageError, msg); }

CliConfig merge(const CLI::App* sub, const Flags& f) {
  CliConfig cfg;
  cfg.command = sub->get_name();
  if (cfg.command == "version") return cfg;

  if (given(sub, "--config")) apply_config_file(cfg, f.config);

  if (given(sub, "--content")) cfg.content = f.content;
  if (given(sub, "--out")) cfg.out = f.out;
  if (given(sub, "--weights")) cfg.weights = f.weights;
  if (given(sub, "--device")) cfg.device = f.device;
  if (given(sub, "--size")) cfg.size = f.size;
  if (given(sub, "--threads")) cfg.threads = f.threads;
  if (given(sub, "--conf-threshold")) cfg.conf_threshold = f.conf;
  if (given(sub, "--fetch-weights")) cfg.fetch_weights = f.fetch_weights;

  if (cfg.command == "stylize") {
    if (given(sub, "--alpha")) cfg.style.alpha = f.alpha;
    if (given(sub, "--beta")) cfg.style.beta = f.beta;
    if (given(sub, "--iters")) cfg.style.iterations = f.iters;
    if (given(sub, "--step")) cfg.style.step_size = f.step;
    if (given(sub, "--seed")) cfg.style.seed = f.seed;
    if (given(sub, "--init")) cfg.style.init_mode = parse_init_mode(f.init);
    if (given(sub, "--log-every")) cfg.style.log_every = f.log_every;
    if (given(sub, "--skip-unmatched")) cfg.skip_unmatched = f.skip_unmatched;
    if (given(sub, "--style") || given(sub, "--target")) {
      if (f.styles.size() != f.targets.size()) {
        usage("--style and --target must be given the same number of times (" + std::to_string(f.styles.size()) +
              " vs " + std::to_string(f.targets.size()) + ")");
      }
      cfg.jobs.clear();
      for (std::size_t k = 0; k < f.styles.size(); ++k) cfg.jobs.push_back(StyleJob{f.styles[k], f.targets[k], 0, {}});
    }
    if (given(sub, "--feather")) {
      for (auto& job : cfg.jobs) job.feather_radius = f.feather;
    }
  }

  if (cfg.content.empty()) usage("--content is required");
  if (cfg.size < kMinImageSide) usage("--size must be at least " + std::to_string(kMinImageSide));
  if (cfg.threads < 1) usage("--threads must be at least 1");
  if (!(cfg.conf_threshold > 0.0f && cfg.conf_threshold < 1.0f)) usage("--conf-threshold must lie in (0,1)");
  if (cfg.device != "cpu" && cfg.device != "accelerator") usage("--device must be cpu or accelerator");
  if (cfg.command == "stylize") {
    if (cfg.jobs.empty()) usage("at least one --style/--target pair is required");
    if (cfg.style.alpha < 0) usage("--alpha must be non-negative");
    if (cfg.style.beta < 0) usage("--beta must be non-negative");
    if (cfg.style.iterations < 0) usage("--iters must be non-negative");
    if (!(cfg.style.step_size > 0)) usage("--step must be positive");
    if (cfg.style.log_every < 1) usage("--log-every must be positive");
    for (const auto& job : cfg.jobs) {
      if (job.feather_radius < 0) usage("--feather must be non-negative");
      TargetSelector::parse(job.selector);
    }
    cfg.style.validate(cfg.taps);
  }
  return cfg;
}

void build_app(CLI::App& app, Flags& f) {
  app.require_subcommand(1);
  auto* stylize = app.add_subcommand("stylize", "Stylize selected objects of a content image");
  add_common(stylize, f);
  add_stylize(stylize, f);
  auto* segment = app.add_subcommand("segment", "Write detections and instance masks only");
  add_common(segment, f);
  app.add_subcommand("version", "Print the version");
}

const CLI::App* chosen(const CLI::App& app) {
  const auto subs = app.get_subcommands();
  return subs.empty() ? nullptr : subs.front();
}

}  // namespace

CliConfig parse_args(int argc, const char* const* argv) {
  CLI::App app{"Object-based neural style transfer", "ostk"};
  Flags f;
  build_app(app, f);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    usage(e.what());
  }
  return merge(chosen(app), f);
}

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::UsageError:
    case ErrorKind::InvalidConfig:
    case ErrorKind::SelectorParseError:
      return kExitUsage;
    case ErrorKind::FileNotFound:
    case ErrorKind::UnsupportedFormat:
    case ErrorKind::CorruptImage:
    case ErrorKind::IoError:
    case ErrorKind::WeightsNotFound:
    case ErrorKind::LoadFailure:
    case ErrorKind::ArchitectureMismatch:
      return kExitInput;
    case ErrorKind::NoTargetMatched:
      return kExitNoTarget;
    case ErrorKind::NonFiniteLoss:
    case ErrorKind::NonFiniteActivation:
      return kExitNumeric;
    default:
      return kExitFailure;
  }
}

namespace {

fs::path cache_dir() {
  if (const char* xdg = std::getenv("XDG_CACHE_HOME"); xdg != nullptr && *xdg != '\0') return fs::path(xdg) / "ostk";
  if (const char* home = std::getenv("HOME"); home != nullptr && *home != '\0') return fs::path(home) / ".cache" / "ostk";
  return fs::temp_directory_path() / "ostk";
}

}  // namespace

void fetch_file(const std::string& url, const fs::path& dest) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorKind::WeightsNotFound, "bad URL " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  const std::string origin = url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

  httplib::Client client(origin);
  client.set_follow_location(true);
  client.set_connection_timeout(30);
  client.set_read_timeout(300);

  std::error_code ec;
  fs::create_directories(dest.parent_path().empty() ? fs::path(".") : dest.parent_path(), ec);
  const fs::path partial = dest.string() + ".part";
  std::ofstream file(partial, std::ios::binary);
  if (!file) throw Error(ErrorKind::IoError, "cannot write " + partial.string());
  const auto res = client.Get(path, [&](const char* data, std::size_t n) {
    file.write(data, static_cast<std::streamsize>(n));
    return static_cast<bool>(file);
  });
  file.close();
  if (!res || res->status != 200) {
    fs::remove(partial, ec);
    const std::string why = res ? "HTTP " + std::to_string(res->status) : httplib::to_string(res.error());
    throw Error(ErrorKind::WeightsNotFound, "download of " + url + " failed: " + why);
  }
  fs::rename(partial, dest, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot move download into place: " + ec.message());
}

fs::path resolve_weights(const CliConfig& cfg) {
  fs::path candidate = cfg.weights;
  if (candidate.empty()) {
    if (const char* env = std::getenv("OSTK_WEIGHTS"); env != nullptr && *env != '\0') candidate = env;
  }
  if (!candidate.empty() && fs::exists(candidate)) return candidate;

  if (!cfg.fetch_weights) {
    if (candidate.empty()) {
      throw Error(ErrorKind::WeightsNotFound,
                  "no weights given; pass --weights, set OSTK_WEIGHTS, or allow a download with --fetch-weights");
    }
    throw Error(ErrorKind::WeightsNotFound, candidate.string());
  }
  const fs::path dest = candidate.empty() ? cache_dir() / kDefaultWeightsFile : candidate;
  if (fs::exists(dest)) return dest;
  const char* url = std::getenv("OSTK_WEIGHTS_URL");
  fetch_file(url != nullptr && *url != '\0' ? url : kDefaultWeightsUrl, dest);
  return dest;
}

namespace {

void write_segmentation(const BackboneModel& model, const CliConfig& cfg, std::ostream& out) {
  const Image raw = load_image(cfg.content);
  const auto extent = working_extent(raw.height(), raw.width(), cfg.size, model.input_stride());
  const Image content = resize(raw, extent.height, extent.width);
  const auto detections = model.segment(content, cfg.conf_threshold);

  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create " + cfg.out.string());
  json dets = json::array();
  for (std::size_t i = 0; i < detections.size(); ++i) {
    const auto& d = detections[i];
    const std::string mask_name = "mask_" + std::to_string(i) + ".png";
    save_mask(binarize(d.mask), cfg.out / mask_name);
    dets.push_back({{"id", i},
                    {"class", d.class_label},
                    {"confidence", d.confidence},
                    {"bbox", {d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2}},
                    {"mask", mask_name}});
    out << i << '\t' << d.class_label << '\t' << d.confidence << '\n';
  }
  json doc{{"content", cfg.content.string()},
           {"working_size", {{"height", extent.height}, {"width", extent.width}}},
           {"weights", model.weights_source()},
           {"detections", std::move(dets)}};
  std::ofstream f(cfg.out / "detections.json");
  f << doc.dump(2) << '\n';
  if (!f) throw Error(ErrorKind::IoError, "cannot write detections.json");
}

}  // namespace

int run_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Object-based neural style transfer", "ostk"};
  Flags f;
  build_app(app, f);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  Logger log(err);

  try {
    const CliConfig cfg = merge(chosen(app), f);
    if (cfg.command == "version") {
      out << "ostk " << OSTK_VERSION << '\n';
      return kExitOk;
    }
    if (cfg.threads == 1) at::set_num_threads(1);

    const fs::path weights = resolve_weights(cfg);
    log.info("loading " + weights.string());
    const BackboneModel model =
        load_model(weights, cfg.taps, cfg.device == "accelerator" ? Device::accelerator : Device::cpu);

    if (cfg.command == "segment") {
      write_segmentation(model, cfg, out);
      return kExitOk;
    }

    CliConfig snapshot = cfg;
    snapshot.weights = weights;
    RunOptions options;
    options.style = cfg.style;
    options.long_side = cfg.size;
    options.conf_threshold = cfg.conf_threshold;
    options.skip_unmatched = cfg.skip_unmatched;
    options.threads = cfg.threads;
    options.config_snapshot = to_json(snapshot);
    options.progress = [&](std::size_t run, int it, const LossRecord& r) {
      char line[160];
      std::snprintf(line, sizeof line, "run %zu iter %d content %.6g style %.6g total %.6g", run, it, r.content_loss,
                    r.style_loss, r.total_loss);
      log.info(line);
    };
    const auto manifest = run(model, cfg.content, cfg.jobs, options, cfg.out);
    for (const auto& job : manifest.jobs) {
      if (job.skipped) log.warn("job " + std::to_string(job.index) + " ('" + job.selector + "') matched nothing; skipped");
    }
    out << (cfg.out / manifest.final_image).string() << '\n';
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    if (e.kind() == ErrorKind::UsageError) err << '\n' << app.help();
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace ostk::cli
