#include "ostk/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <future>
#include <tuple>

#include <nlohmann/json.hpp>

#include "ostk/error.hpp"

namespace ostk {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::filesystem::path normalized(const std::filesystem::path& p) {
  return std::filesystem::absolute(p).lexically_normal();
}

StyleTransferConfig effective_config(const StyleTransferConfig& base, const JobOverrides& o) {
  StyleTransferConfig cfg = base;
  if (o.alpha) cfg.alpha = *o.alpha;
  if (o.beta) cfg.beta = *o.beta;
  if (o.iterations) cfg.iterations = *o.iterations;
  return cfg;
}

std::string job_file(std::size_t k, const char* suffix) { return "job_" + std::to_string(k) + suffix; }

}  // namespace

ExecutionPlan plan(const std::vector<StyleJob>& jobs, const StyleTransferConfig& base) {
  ExecutionPlan p;
  std::map<std::tuple<std::filesystem::path, double, double, int>, std::size_t> seen;
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    const auto cfg = effective_config(base, jobs[k].overrides);
    const auto key = std::make_tuple(normalized(jobs[k].style), cfg.alpha, cfg.beta, cfg.iterations);
    auto [it, inserted] = seen.try_emplace(key, p.runs.size());
    if (inserted) p.runs.push_back({jobs[k].style, cfg, {}});
    p.runs[it->second].jobs.push_back(k);
    p.job_run.push_back(it->second);
    p.composite_order.push_back(k);
  }
  return p;
}

Image compose_layers(const Image& canvas, const std::vector<std::pair<const Image*, Mask>>& layers) {
  Image out = canvas;
  for (const auto& [stylized, mask] : layers) out = composite(out, *stylized, mask);
  return out;
}

std::string RunManifest::to_json() const {
  using nlohmann::json;
  json j;
  j["content"] = content.string();
  j["out_dir"] = out_dir.string();
  j["working_size"] = {{"height", extent.height}, {"width", extent.width}};
  j["weights"] = weights;
  j["seed"] = seed;
  j["stylize_runs"] = stylize_runs;
  j["final"] = final_image;

  json dets = json::array();
  for (const auto& d : detections) {
    dets.push_back({{"id", d.id},
                    {"class", d.class_label},
                    {"confidence", d.confidence},
                    {"bbox", {d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2}}});
  }
  j["detections"] = std::move(dets);

  auto loss_json = [](const LossRecord& r) {
    return json{{"iteration", r.iteration},
                {"content_loss", r.content_loss},
                {"style_loss", r.style_loss},
                {"total_loss", r.total_loss}};
  };
  json js = json::array();
  for (const auto& r : jobs) {
    json e{{"index", r.index},
           {"style", r.style.string()},
           {"selector", r.selector},
           {"skipped", r.skipped},
           {"detections", r.detections},
           {"feather", r.feather_radius}};
    if (!r.skipped) {
      e["run"] = r.run;
      e["coverage"] = r.coverage;
      e["loss"] = {{"initial", loss_json(r.initial_loss)}, {"final", loss_json(r.final_loss)}};
      e["artifacts"] = r.artifacts;
    }
    js.push_back(std::move(e));
  }
  j["jobs"] = std::move(js);
  j["config"] = config_snapshot.empty() ? json(nullptr) : json::parse(config_snapshot);
  j["timings_seconds"] = timings;
  return j.dump(2) + "\n";
}

RunManifest run(const BackboneModel& model, const std::filesystem::path& content_path,
                const std::vector<StyleJob>& jobs, const RunOptions& options,
                const std::filesystem::path& out_dir) {
  if (jobs.empty()) throw Error(ErrorKind::InvalidConfig, "at least one style job is required");
  options.style.validate(model.taps());
  for (const auto& job : jobs) {
    if (job.feather_radius < 0) throw Error(ErrorKind::InvalidConfig, "feather radius must be non-negative");
    effective_config(options.style, job.overrides).validate(model.taps());
  }
  std::vector<TargetSelector> selectors;
  for (const auto& job : jobs) selectors.push_back(TargetSelector::parse(job.selector));

  const auto t_start = Clock::now();
  RunManifest manifest;
  manifest.content = content_path;
  manifest.out_dir = out_dir;
  manifest.weights = model.weights_source();
  manifest.seed = options.style.seed;
  manifest.config_snapshot = options.config_snapshot;

  const Image raw = load_image(content_path);
  manifest.extent = working_extent(raw.height(), raw.width(), options.long_side, model.input_stride());
  const Image content = resize(raw, manifest.extent.height, manifest.extent.width, ResizeMode::bilinear);

  const ExecutionPlan execution = plan(jobs, options.style);
  std::vector<Image> styles;
  for (const auto& r : execution.runs) styles.push_back(load_image(r.style));
  manifest.timings["load"] = seconds_since(t_start);

  auto t = Clock::now();
  const auto detections = model.segment(content, options.conf_threshold);
  manifest.timings["segment"] = seconds_since(t);
  for (std::size_t i = 0; i < detections.size(); ++i) {
    manifest.detections.push_back({i, detections[i].class_label, detections[i].confidence, detections[i].bbox});
  }

  std::vector<std::vector<std::size_t>> matches;
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    matches.push_back(match_targets(detections, selectors[k]));
    if (matches.back().empty() && !options.skip_unmatched) {
      throw Error(ErrorKind::NoTargetMatched, "selector '" + jobs[k].selector + "' of job " + std::to_string(k) +
                                                  " matched none of " + std::to_string(detections.size()) +
                                                  " detections");
    }
  }

  std::vector<bool> needed(execution.runs.size(), false);
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    if (!matches[k].empty()) needed[execution.job_run[k]] = true;
  }

  t = Clock::now();
  std::vector<std::optional<StylizeResult>> results(execution.runs.size());
  auto stylize_one = [&](std::size_t r) {
    ProgressCallback cb;
    if (options.progress) {
      cb = [&, r](int it, const LossRecord& rec, const Image&) { options.progress(r, it, rec); };
    }
    return stylize(model, content, styles[r], execution.runs[r].config, cb);
  };
  const auto workers = static_cast<std::size_t>(std::max(1, options.threads));
  if (workers == 1) {
    for (std::size_t r = 0; r < execution.runs.size(); ++r) {
      if (needed[r]) results[r] = stylize_one(r);
    }
  } else {
    std::vector<std::size_t> pending;
    for (std::size_t r = 0; r < execution.runs.size(); ++r) {
      if (needed[r]) pending.push_back(r);
    }
    for (std::size_t begin = 0; begin < pending.size(); begin += workers) {
      std::vector<std::pair<std::size_t, std::future<StylizeResult>>> batch;
      for (std::size_t i = begin; i < std::min(pending.size(), begin + workers); ++i) {
        batch.emplace_back(pending[i], std::async(std::launch::async, stylize_one, pending[i]));
      }
      for (auto& [r, fut] : batch) results[r] = fut.get();
    }
  }
  manifest.stylize_runs = static_cast<std::size_t>(std::count(needed.begin(), needed.end(), true));
  manifest.timings["stylize"] = seconds_since(t);

  t = Clock::now();
  Image canvas = content;
  std::vector<BinaryMask> job_masks(jobs.size());
  for (std::size_t k : execution.composite_order) {
    JobRecord rec;
    rec.index = k;
    rec.style = jobs[k].style;
    rec.selector = jobs[k].selector;
    rec.feather_radius = jobs[k].feather_radius;
    rec.detections = matches[k];
    rec.run = execution.job_run[k];
    rec.skipped = matches[k].empty();
    if (!rec.skipped) {
      BinaryMask m(content.height(), content.width());
      for (std::size_t d : matches[k]) m = mask_union(m, binarize(detections[d].mask, options.mask_threshold));
      rec.coverage = m.coverage();
      const auto& result = *results[rec.run];
      canvas = composite(canvas, result.image, feather(m, jobs[k].feather_radius));
      rec.initial_loss = result.trace.records.front();
      rec.final_loss = result.trace.records.back();
      rec.artifacts = {{"mask", job_file(k, "_mask.png")},
                       {"styled_full", job_file(k, "_styled_full.png")},
                       {"loss_csv", job_file(k, "_loss.csv")}};
      job_masks[k] = std::move(m);
    }
    manifest.jobs.push_back(std::move(rec));
  }
  manifest.timings["composite"] = seconds_since(t);

  t = Clock::now();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create " + out_dir.string() + ": " + ec.message());
  for (const auto& rec : manifest.jobs) {
    if (rec.skipped) continue;
    const auto& result = *results[rec.run];
    save_mask(job_masks[rec.index], out_dir / rec.artifacts.at("mask"));
    save_image(result.image, out_dir / rec.artifacts.at("styled_full"));
    result.trace.write_csv(out_dir / rec.artifacts.at("loss_csv"));
  }
  manifest.final_image = "final.png";
  save_image(canvas, out_dir / manifest.final_image);
  manifest.timings["write"] = seconds_since(t);
  manifest.timings["total"] = seconds_since(t_start);

  std::ofstream f(out_dir / "manifest.json", std::ios::binary);
  f << manifest.to_json();
  if (!f) throw Error(ErrorKind::IoError, "cannot write manifest.json");
  return manifest;
}

}  // namespace ostk
