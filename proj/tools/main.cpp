// geobox command line: simulate, annotate, benchmark, train-refiner,
// train-ranker, search-params. Exit codes: 0 ok, 2 configuration error,
// 1 runtime failure. Diagnostics go to stderr only.

#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "geobox/error.hpp"
#include "geobox/evaluation.hpp"
#include "geobox/io.hpp"
#include "geobox/parallel.hpp"
#include "geobox/report.hpp"
#include "geobox/simulator.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int jobs = 0;
  // annotate
  std::string clip, flows, gps, calibration, ground_truth;
  std::string params, refiner_model, ranker_model;
  std::string version = "v4";
  std::string policy = "inter";
  std::optional<double> keep_top;
  bool dump_stages = false;
  // training / search
  int budget = 0;
  int epochs = -1;
};

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw geobox::Error("cannot create " + dir + ": " + ec.message());
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw geobox::ConfigError(std::string("missing ") + what);
  if (!fs::exists(path)) throw geobox::ConfigError(std::string(what) + " not found: " + path);
}

int jobs_of(const Options& o) { return o.jobs > 0 ? o.jobs : geobox::default_jobs(); }

geobox::ScenarioSpec load_scenario(const Options& o) {
  require_file(o.config, "scenario config (--config)");
  geobox::ScenarioSpec spec = geobox::scenario_from_json(geobox::read_json(o.config));
  if (o.seed) spec.seed = *o.seed;
  return spec;
}

geobox::SuiteSpec load_suite(const Options& o) {
  geobox::SuiteSpec spec;
  if (!o.config.empty()) {
    require_file(o.config, "suite config (--config)");
    spec = geobox::suite_from_json(geobox::read_json(o.config));
  }
  if (o.seed) spec.seed = *o.seed;
  spec.jobs = jobs_of(o);
  return spec;
}

void write_clip(const geobox::Clip& clip, const std::string& dir) {
  ensure_dir(dir);
  const fs::path d(dir);
  geobox::write_text((d / "clip.jsonl").string(), geobox::to_jsonl(geobox::clip_to_jsonl(clip)));
  geobox::write_text((d / "gps.jsonl").string(), geobox::to_jsonl(geobox::gps_to_jsonl(clip.gps)));
  geobox::write_text((d / "calibration.txt").string(), geobox::format_calibration(clip.calibration));
  geobox::write_text((d / "ground_truth.jsonl").string(),
                     geobox::to_jsonl(geobox::ground_truth_to_jsonl(clip.ground_truth)));
}

int cmd_simulate(const Options& o) {
  if (o.out.empty()) throw geobox::ConfigError("missing --out directory");
  write_clip(geobox::generate_scenario(load_scenario(o)), o.out);
  return 0;
}

geobox::Clip load_input_clip(const Options& o) {
  const int modes = !o.config.empty() + !o.clip.empty() + (!o.flows.empty() || !o.gps.empty() || !o.calibration.empty());
  if (modes != 1)
    throw geobox::ConfigError("choose exactly one input: --config (simulate), --clip, or --flows/--gps/--calibration");
  geobox::Clip clip;
  if (!o.config.empty()) {
    clip = geobox::generate_scenario(load_scenario(o));
  } else if (!o.clip.empty()) {
    require_file(o.clip, "clip file (--clip)");
    clip = geobox::clip_from_jsonl(geobox::read_jsonl(o.clip));
  } else {
    require_file(o.flows, "flow file (--flows)");
    require_file(o.gps, "GPS file (--gps)");
    require_file(o.calibration, "calibration file (--calibration)");
    clip.id = fs::path(o.flows).stem().string();
    clip.calibration = geobox::load_calibration(o.calibration);
    clip.homography = geobox::Homography::fit(clip.calibration);
    clip.flow_tracks = geobox::flows_from_jsonl(geobox::read_jsonl(o.flows), clip.fps, &clip.n_frames);
    clip.gps = geobox::gps_from_jsonl(geobox::read_jsonl(o.gps));
  }
  if (!o.ground_truth.empty()) {
    require_file(o.ground_truth, "ground truth file (--ground-truth)");
    clip.ground_truth = geobox::ground_truth_from_jsonl(geobox::read_jsonl(o.ground_truth), clip.n_frames);
  }
  if (clip.n_frames <= 0) throw geobox::EmptyClip("input clip has no frames");
  return clip;
}

geobox::StageModels load_models(const Options& o) {
  geobox::HmmParams params;
  if (!o.params.empty()) {
    require_file(o.params, "params file (--params)");
    params = geobox::params_from_json(geobox::read_json(o.params));
  }
  geobox::StageModels models = geobox::StageModels::uniform(params);
  if (!o.refiner_model.empty()) {
    require_file(o.refiner_model, "refiner model (--refiner-model)");
    models.refiner = geobox::RefinerModel::from_json(geobox::read_json(o.refiner_model));
  }
  if (!o.ranker_model.empty()) {
    require_file(o.ranker_model, "ranker model (--ranker-model)");
    models.ranker = geobox::RankerModel::from_json(geobox::read_json(o.ranker_model));
  }
  return models;
}

json box_json(const geobox::BoundingBox& b) { return {b.cx, b.cy, b.w, b.h}; }

void dump_stages(const geobox::PreparedClip& p, const geobox::TrackOutput& out, const std::string& dir) {
  const fs::path d(dir);
  std::vector<json> cands;
  for (std::size_t f = 0; f < p.proposal.frames.size(); ++f) {
    json list = json::array();
    for (const auto& c : p.proposal.frames[f])
      list.push_back({{"source", c.source}, {"cof", c.cof}, {"members", c.members}, {"box", box_json(c.bbox)},
                      {"speed", c.speed}, {"extended", c.extended}});
    cands.push_back({{"frame", f}, {"candidates", list}});
  }
  geobox::write_text((d / "candidates.jsonl").string(), geobox::to_jsonl(cands));
  json sizes = json::array();
  for (const auto& s : p.setup.geometry.states) sizes.push_back(s.size());
  geobox::write_text((d / "lattice.json").string(), json{{"states_per_frame", sizes}}.dump() + "\n");
  std::vector<json> match, boxes;
  for (std::size_t f = 0; f < out.final.size(); ++f) {
    const int c = out.match.candidate[f];
    json cof = c >= 0 ? json(p.proposal.frames[f][static_cast<std::size_t>(c)].cof) : json("out");
    const double contrib = out.match.contribution[f];
    match.push_back({{"frame", f},
                     {"cof", cof},
                     {"box", out.stage2[f] ? box_json(*out.stage2[f]) : json()},
                     {"contribution", std::isfinite(contrib) ? json(contrib) : json("-inf")}});
    boxes.push_back({{"frame", f},
                     {"raw", out.stage2[f] ? box_json(*out.stage2[f]) : json()},
                     {"refined", out.final[f] ? box_json(*out.final[f]) : json()}});
  }
  geobox::write_text((d / "match.jsonl").string(), geobox::to_jsonl(match));
  geobox::write_text((d / "boxes.jsonl").string(), geobox::to_jsonl(boxes));
}

geobox::Policy parse_policy(const std::string& s) {
  if (s == "intra") return geobox::Policy::Intra;
  if (s == "inter") return geobox::Policy::Inter;
  throw geobox::ConfigError("unknown policy '" + s + "' (expected intra or inter)");
}

int cmd_annotate(const Options& o) {
  if (o.out.empty()) throw geobox::ConfigError("missing --out directory");
  const geobox::Version version = geobox::parse_version(o.version);
  const geobox::Policy policy = parse_policy(o.policy);
  if (o.keep_top && !(*o.keep_top > 0.0 && *o.keep_top <= 100.0))
    throw geobox::ConfigError("--keep-top must be in (0, 100]");
  const geobox::StageModels models = load_models(o);
  const geobox::Clip clip = load_input_clip(o);
  const auto prepared = geobox::prepare_clip(clip, {}, models.v3.speed_window_s);
  const geobox::TrackOutput out = geobox::annotate(*prepared, geobox::AblationConfig::of(version), models);

  std::vector<geobox::Annotation> anns;
  for (std::size_t f = 0; f < out.final.size(); ++f)
    if (out.final[f]) anns.push_back({clip.id, static_cast<int>(f), *out.final[f], *out.scores[f]});
  auto ranked = geobox::rank(anns, policy);
  if (o.keep_top) ranked = geobox::keep_top(ranked, *o.keep_top);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.annotation.frame < b.annotation.frame; });
  std::vector<json> rows;
  for (const auto& r : ranked) {
    const auto& a = r.annotation;
    rows.push_back({{"clip", a.clip}, {"frame", a.frame}, {"cx", a.box.cx}, {"cy", a.box.cy}, {"w", a.box.w},
                    {"h", a.box.h}, {"score", a.score}, {"percentile", r.percentile}});
  }
  ensure_dir(o.out);
  const fs::path d(o.out);
  geobox::write_text((d / "annotations.jsonl").string(), geobox::to_jsonl(rows));
  if (clip.has_ground_truth()) {
    const auto m = geobox::clip_metrics(out.final, clip.ground_truth, clip.id);
    const json report = {{"clip", clip.id},
                         {"version", geobox::version_name(version)},
                         {"precision", m.precision_at_iou_05},
                         {"median_nd", std::isfinite(m.median_nd) ? json(m.median_nd) : json("inf")},
                         {"mean_iou", m.mean_iou},
                         {"frames", m.frames.size()}};
    geobox::write_text((d / "metrics.json").string(), report.dump(2) + "\n");
  }
  if (o.dump_stages) dump_stages(*prepared, out, o.out);
  return 0;
}

int cmd_benchmark(const Options& o) {
  if (o.out.empty()) throw geobox::ConfigError("missing --out directory");
  const geobox::BenchmarkOutput out = geobox::run_benchmark(load_suite(o));
  geobox::write_benchmark(out, o.out);
  return 0;
}

// Simulated training set for the standalone training commands.
struct TrainingSet {
  std::vector<std::unique_ptr<geobox::Clip>> clips;
  std::vector<std::unique_ptr<geobox::PreparedClip>> prepared;
};

TrainingSet build_training_set(const geobox::SuiteSpec& spec) {
  if (spec.n_clips < 1) throw geobox::TooFewClips("training needs at least one clip");
  TrainingSet t;
  const auto n = static_cast<std::size_t>(spec.n_clips);
  t.clips.resize(n);
  t.prepared.resize(n);
  geobox::parallel_for(n, spec.jobs, [&](std::size_t i) {
    t.clips[i] = std::make_unique<geobox::Clip>(geobox::generate_scenario(geobox::suite_scenario(spec, static_cast<int>(i))));
    t.prepared[i] = geobox::prepare_clip(*t.clips[i]);
  });
  return t;
}

int cmd_search(const Options& o) {
  if (o.out.empty()) throw geobox::ConfigError("missing --out file");
  const geobox::SuiteSpec spec = load_suite(o);
  const geobox::Version v = geobox::parse_version(o.version == "v4" ? "v3" : o.version);
  if (v == geobox::Version::Base) throw geobox::ConfigError("the baseline has no parameters to search");
  const TrainingSet t = build_training_set(spec);
  std::vector<geobox::MatchSetup> setups;
  for (const auto& p : t.prepared) setups.push_back(p->setup);
  const auto staged = geobox::search_staged(setups, o.budget > 0 ? o.budget : spec.search_budget, spec.seed, spec.jobs);
  const geobox::SearchResult& result =
      v == geobox::Version::V1 ? staged.v1 : v == geobox::Version::V2 ? staged.v2 : staged.v3;
  json j = geobox::params_to_json(result.params);
  geobox::write_text(o.out, j.dump(2) + "\n");
  return 0;
}

int cmd_train_refiner(const Options& o) {
  if (o.out.empty()) throw geobox::ConfigError("missing --out file");
  const geobox::SuiteSpec spec = load_suite(o);
  const geobox::StageModels models = load_models(o);
  const TrainingSet t = build_training_set(spec);
  std::vector<geobox::RefinerSample> samples;
  geobox::Rng rng(geobox::derive_seed(spec.seed, 4));
  for (const auto& p : t.prepared) {
    const auto v3 = geobox::annotate(*p, geobox::AblationConfig::of(geobox::Version::V3), models);
    auto s = geobox::refiner_training_samples(*p, v3, spec.corruption_copies, rng);
    std::move(s.begin(), s.end(), std::back_inserter(samples));
  }
  geobox::TrainOptions opt = spec.refiner_training;
  if (o.epochs >= 0) opt.epochs = o.epochs;
  opt.seed = geobox::derive_seed(spec.seed, 5);
  const auto model = geobox::train_refiner(samples, opt, {}, spec.fps);
  geobox::write_text(o.out, model.to_json().dump() + "\n");
  return 0;
}

int cmd_train_ranker(const Options& o) {
  if (o.out.empty()) throw geobox::ConfigError("missing --out file");
  const geobox::SuiteSpec spec = load_suite(o);
  const geobox::StageModels models = load_models(o);
  const TrainingSet t = build_training_set(spec);
  std::vector<geobox::RankerSample> samples;
  for (const auto& p : t.prepared) {
    const auto v4 = geobox::annotate(*p, geobox::AblationConfig::of(geobox::Version::V4), models);
    auto s = geobox::ranker_training_samples(*p, v4);
    std::move(s.begin(), s.end(), std::back_inserter(samples));
  }
  geobox::TrainOptions opt = spec.ranker_training;
  if (o.epochs >= 0) opt.epochs = o.epochs;
  opt.seed = geobox::derive_seed(spec.seed, 6);
  const auto model = geobox::train_ranker(samples, opt, {}, spec.fps);
  geobox::write_text(o.out, model.to_json().dump() + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GPS + optical-flow bounding-box annotation engine"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "JSON config (scenario or suite)");
    c->add_option("--out", o.out, "Output directory or file");
    c->add_option("--seed", o.seed, "Override the config seed");
    c->add_option("--jobs", o.jobs, "Worker threads (default: available cores)");
  };
  auto model_opts = [&](CLI::App* c) {
    c->add_option("--params", o.params, "HMM parameter JSON");
    c->add_option("--refiner-model", o.refiner_model, "Refiner checkpoint JSON");
    c->add_option("--ranker-model", o.ranker_model, "Ranker checkpoint JSON");
  };

  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic clip");
  common(simulate);

  auto* annotate = app.add_subcommand("annotate", "Run the four stages on one clip");
  common(annotate);
  model_opts(annotate);
  annotate->add_option("--clip", o.clip, "Clip JSONL written by simulate");
  annotate->add_option("--flows", o.flows, "Per-frame flow JSONL (ingest mode)");
  annotate->add_option("--gps", o.gps, "GPS fix JSONL (ingest mode)");
  annotate->add_option("--calibration", o.calibration, "Four-line calibration file (ingest mode)");
  annotate->add_option("--ground-truth", o.ground_truth, "Ground-truth JSONL for metrics");
  annotate->add_option("--version", o.version, "base, v1, v2, v3 or v4");
  annotate->add_option("--policy", o.policy, "Ranking policy: intra or inter");
  annotate->add_option("--keep-top", o.keep_top, "Keep the top x% of ranked boxes");
  annotate->add_flag("--dump-stages", o.dump_stages, "Write candidates, lattice sizes and raw vs refined boxes");

  auto* benchmark = app.add_subcommand("benchmark", "Cross-validated benchmark over a simulated suite");
  common(benchmark);

  auto* train_refiner = app.add_subcommand("train-refiner", "Train the refinement model on a simulated suite");
  common(train_refiner);
  model_opts(train_refiner);
  train_refiner->add_option("--epochs", o.epochs, "Override the training epochs");

  auto* train_ranker = app.add_subcommand("train-ranker", "Train the ranking model on a simulated suite");
  common(train_ranker);
  model_opts(train_ranker);
  train_ranker->add_option("--epochs", o.epochs, "Override the training epochs");

  auto* search = app.add_subcommand("search-params", "Random search of HMM parameters on a simulated suite");
  common(search);
  search->add_option("--version", o.version, "v1, v2 or v3 feature set");
  search->add_option("--budget", o.budget, "Number of trials");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*simulate) return cmd_simulate(o);
    if (*annotate) return cmd_annotate(o);
    if (*benchmark) return cmd_benchmark(o);
    if (*train_refiner) return cmd_train_refiner(o);
    if (*train_ranker) return cmd_train_ranker(o);
    if (*search) return cmd_search(o);
  } catch (const geobox::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
