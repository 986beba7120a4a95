#include "geobox/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "geobox/error.hpp"
#include "geobox/io.hpp"
#include "geobox/parallel.hpp"

namespace geobox {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double mean(std::span<const double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// JSON has no infinities: +inf is written as the string "inf", NaN as null.
nlohmann::json num(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

std::string clip_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "clip-%03d", index);
  return buf;
}

}  // namespace

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

ClipMetrics clip_metrics(std::span<const std::optional<BoundingBox>> pred,
                         std::span<const std::optional<BoundingBox>> gt, const std::string& clip_id) {
  if (pred.size() != gt.size()) throw ShapeMismatch("clip_metrics: prediction and ground truth lengths differ");
  ClipMetrics m;
  m.clip_id = clip_id;
  int out_correct = 0;
  int hits = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!gt[i]) {
      ++m.out_of_frame_frames;
      if (!pred[i]) ++out_correct;
      continue;
    }
    const double u = pred[i] ? iou(*pred[i], *gt[i]) : 0.0;
    const double d = pred[i] ? normalized_distance(*pred[i], *gt[i]) : kInf;
    m.frames.push_back(static_cast<int>(i));
    m.iou.push_back(u);
    m.nd.push_back(d);
    if (u > 0.5) ++hits;
  }
  if (m.frames.empty()) throw NoOverlapFrames("clip " + clip_id + " has no frame with a ground-truth box");
  m.precision_at_iou_05 = static_cast<double>(hits) / static_cast<double>(m.frames.size());
  m.median_nd = median(m.nd);
  m.mean_iou = mean(m.iou);
  m.out_of_frame_accuracy = m.out_of_frame_frames > 0
                                ? static_cast<double>(out_correct) / m.out_of_frame_frames
                                : std::numeric_limits<double>::quiet_NaN();
  return m;
}

std::vector<AblationRow> run_ablation(std::span<const PreparedClip* const> clips,
                                      std::span<const AblationConfig> configs, const StageModels& models) {
  std::vector<AblationRow> rows;
  for (const auto& cfg : configs) {
    AblationRow row;
    row.version = cfg.version;
    std::vector<double> p, nd, u;
    for (const PreparedClip* c : clips) {
      if (!c->clip->has_ground_truth()) continue;
      const TrackOutput out = annotate(*c, cfg, models);
      try {
        const ClipMetrics m = clip_metrics(out.final, c->clip->ground_truth, c->clip->id);
        p.push_back(m.precision_at_iou_05);
        nd.push_back(m.median_nd);
        u.push_back(m.mean_iou);
      } catch (const NoOverlapFrames&) {
      }
    }
    row.precision = mean(p);
    row.median_nd = mean(nd);
    row.mean_iou = mean(u);
    row.clips = static_cast<int>(p.size());
    rows.push_back(row);
  }
  return rows;
}

std::array<Fold, 3> three_fold_split(std::size_t n_clips, std::uint64_t seed) {
  if (n_clips < 3) throw TooFewClips("three-fold cross-validation needs at least 3 clips");
  std::vector<std::size_t> order(n_clips);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
  std::array<Fold, 3> folds;
  for (std::size_t i = 0; i < n_clips; ++i) folds[i % 3].test.push_back(order[i]);
  for (std::size_t f = 0; f < 3; ++f) {
    std::sort(folds[f].test.begin(), folds[f].test.end());
    for (std::size_t g = 0; g < 3; ++g)
      if (g != f) folds[f].train.insert(folds[f].train.end(), folds[g].test.begin(), folds[g].test.end());
    std::sort(folds[f].train.begin(), folds[f].train.end());
  }
  return folds;
}

void validate(const SuiteSpec& s) {
  auto fail = [](const std::string& m) { throw InvalidSpec("suite: " + m); };
  if (s.n_clips < 0) fail("n_clips must be >= 0");
  if (!(s.duration_s > 0.0)) fail("duration_s must be > 0");
  if (s.fps < 1) fail("fps must be >= 1");
  if (s.gps_sigma_m[0] < 0.0 || s.gps_sigma_m[1] < s.gps_sigma_m[0]) fail("gps_sigma_m must be an ordered range >= 0");
  if (s.gps_lag_s[0] < 0.0 || s.gps_lag_s[1] < s.gps_lag_s[0]) fail("gps_lag_s must be an ordered range >= 0");
  if (s.gps_bias_max_m < 0.0) fail("gps_bias_max_m must be >= 0");
  if (s.gps_stick_prob < 0.0 || s.gps_stick_prob > 1.0) fail("gps_stick_prob must be in [0,1]");
  if (s.distractors[0] < 0 || s.distractors[1] < s.distractors[0]) fail("distractors must be an ordered range >= 0");
  if (s.near_fraction < 0.0 || s.near_fraction > 1.0) fail("near_fraction must be in [0,1]");
  if (s.shadow_prob < 0.0 || s.shadow_prob > 1.0) fail("shadow_prob must be in [0,1]");
  if (s.jitter_px < 0.0 || s.dropout < 0.0 || s.dropout > 1.0 || s.clutter_per_frame < 0) fail("flow noise");
  if (s.search_budget < 1) fail("search_budget must be >= 1");
  if (s.refiner_training.epochs < 0 || s.ranker_training.epochs < 0) fail("epochs must be >= 0");
  if (s.corruption_copies < 0) fail("corruption_copies must be >= 0");
  for (double f : s.keep_fractions)
    if (!(f > 0.0 && f <= 1.0)) fail("keep_fractions must lie in (0,1]");
  if (s.jobs < 1) fail("jobs must be >= 1");
}

ScenarioSpec suite_scenario(const SuiteSpec& s, int index) {
  Rng rng(derive_seed(s.seed, static_cast<std::uint64_t>(index)));
  ScenarioSpec sc;
  sc.seed = rng.next();
  sc.duration_s = s.duration_s;
  sc.fps = s.fps;
  sc.n_objects = 1 + rng.uniform_int(s.distractors[0], s.distractors[1]);
  sc.near_fraction = s.near_fraction;
  sc.shadow = rng.bernoulli(s.shadow_prob);
  sc.gps_noise.gaussian_sigma_m = rng.uniform(s.gps_sigma_m[0], s.gps_sigma_m[1]);
  const double bias = rng.uniform(0.0, s.gps_bias_max_m);
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  sc.gps_noise.constant_bias_m = {bias * std::cos(angle), bias * std::sin(angle)};
  sc.gps_noise.lag_s = rng.uniform(s.gps_lag_s[0], s.gps_lag_s[1]);
  sc.gps_noise.stick_prob = s.gps_stick_prob;
  sc.flow_noise.jitter_px = s.jitter_px;
  sc.flow_noise.dropout = s.dropout;
  sc.flow_noise.clutter_per_frame = s.clutter_per_frame;
  return sc;
}

namespace {

nlohmann::json box_json(const BoundingBox& b) { return {b.cx, b.cy, b.w, b.h}; }

std::vector<std::string> ids_of(const std::vector<std::unique_ptr<Clip>>& clips, const std::vector<std::size_t>& idx) {
  std::vector<std::string> out;
  for (auto i : idx) out.push_back(clips[i]->id);
  return out;
}

// Contiguous runs of present entries: [begin, end).
std::vector<std::pair<std::size_t, std::size_t>> runs(const std::vector<std::optional<BoundingBox>>& boxes) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t i = 0;
  while (i < boxes.size()) {
    if (!boxes[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < boxes.size() && boxes[j]) ++j;
    out.emplace_back(i, j);
    i = j;
  }
  return out;
}

}  // namespace

std::vector<RefinerSample> refiner_training_samples(const PreparedClip& c, const TrackOutput& v3, int copies,
                                                    Rng& rng) {
  std::vector<RefinerSample> out;
  const Clip& clip = *c.clip;
  const auto& gt = clip.ground_truth;
  for (auto [b, e] : runs(gt)) {
    BoxSequence clean{clip.fps, {}};
    for (std::size_t i = b; i < e; ++i) clean.boxes.push_back(*gt[i]);
    for (int k = 0; k < copies; ++k) out.push_back(corrupt_sequence(clean, {}, rng));
  }
  for (auto [b, e] : runs(v3.stage2)) {
    RefinerSample s;
    s.input.fps = clip.fps;
    double kept = 0.0;
    for (std::size_t i = b; i < e; ++i) {
      const BoundingBox& p = *v3.stage2[i];
      s.input.boxes.push_back(p);
      const bool use = gt[i] && normalized_distance(p, *gt[i]) < 1.0;
      s.target.push_back(use ? *gt[i] : p);
      s.mask.push_back(use ? 1.0 : 0.0);
      kept += s.mask.back();
    }
    if (kept > 0.0) out.push_back(std::move(s));
  }
  return out;
}

std::vector<RankerSample> ranker_training_samples(const PreparedClip& c, const TrackOutput& v4) {
  std::vector<RankerSample> out;
  const Clip& clip = *c.clip;
  for (auto [b, e] : runs(v4.final)) {
    RankerSample s;
    s.boxes.fps = clip.fps;
    for (std::size_t i = b; i < e; ++i) {
      s.boxes.boxes.push_back(*v4.final[i]);
      s.label.push_back(clip.ground_truth[i] ? iou(*v4.final[i], *clip.ground_truth[i]) : 0.0);
    }
    out.push_back(std::move(s));
  }
  return out;
}

namespace {


struct ClipResult {
  int fold = -1;
  std::array<ClipMetrics, 5> metrics;
  TrackOutput v4;
};

struct MixtureQuality {
  double coverage = 0.0;  // GT frames with a candidate of IoU > 0.5
  double candidates_per_frame = 0.0;
};

MixtureQuality mixture_quality(const Clip& clip, const CandidateFrames& frames) {
  MixtureQuality q;
  int gt_frames = 0, covered = 0;
  std::size_t total = 0;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    total += frames[f].size();
    if (!clip.ground_truth[f]) continue;
    ++gt_frames;
    for (const auto& c : frames[f])
      if (iou(c.bbox, *clip.ground_truth[f]) > 0.5) {
        ++covered;
        break;
      }
  }
  q.coverage = gt_frames > 0 ? static_cast<double>(covered) / gt_frames : 0.0;
  q.candidates_per_frame = frames.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(frames.size());
  return q;
}

}  // namespace

BenchmarkOutput run_benchmark(const SuiteSpec& spec) {
  const auto started = std::chrono::steady_clock::now();
  validate(spec);
  const auto n = static_cast<std::size_t>(spec.n_clips);
  const auto folds = three_fold_split(n, derive_seed(spec.seed, 1000));

  std::vector<std::unique_ptr<Clip>> clips(n);
  std::vector<std::unique_ptr<PreparedClip>> prepared(n);
  parallel_for(n, spec.jobs, [&](std::size_t i) {
    clips[i] = std::make_unique<Clip>(generate_scenario(suite_scenario(spec, static_cast<int>(i))));
    clips[i]->id = clip_name(static_cast<int>(i));
    prepared[i] = prepare_clip(*clips[i]);
  });

  const auto versions = AblationConfig::all();
  std::vector<ClipResult> results(n);
  nlohmann::json fold_records = nlohmann::json::array();

  for (std::size_t f = 0; f < 3; ++f) {
    const Fold& fold = folds[f];
    // search_hyperparams takes a contiguous span; the copies share clip/frame pointers.
    std::vector<MatchSetup> train_setups;
    for (auto i : fold.train) train_setups.push_back(prepared[i]->setup);

    StageModels models;
    const std::uint64_t fold_seed = derive_seed(spec.seed, 2000 + f);
    const StagedSearch staged = search_staged(train_setups, spec.search_budget, fold_seed, spec.jobs);
    const SearchResult &s1 = staged.v1, &s2 = staged.v2, &s3 = staged.v3;
    models.v1 = s1.params;
    models.v2 = s2.params;
    models.v3 = s3.params;
    train_setups.clear();

    // Refiner: corrupted ground truth plus V3 outputs on the training clips.
    std::vector<RefinerSample> rsamples;
    Rng corrupt_rng(derive_seed(fold_seed, 4));
    for (auto i : fold.train) {
      const TrackOutput v3 = annotate(*prepared[i], AblationConfig::of(Version::V3), models);
      auto s = refiner_training_samples(*prepared[i], v3, spec.corruption_copies, corrupt_rng);
      std::move(s.begin(), s.end(), std::back_inserter(rsamples));
    }
    TrainOptions ropt = spec.refiner_training;
    ropt.seed = derive_seed(fold_seed, 5);
    models.refiner = train_refiner(rsamples, ropt, {}, spec.fps);

    // Ranker: IoU labels of the V4 output on the training clips.
    std::vector<RankerSample> ksamples;
    for (auto i : fold.train) {
      const TrackOutput v4 = annotate(*prepared[i], AblationConfig::of(Version::V4), models);
      auto s = ranker_training_samples(*prepared[i], v4);
      std::move(s.begin(), s.end(), std::back_inserter(ksamples));
    }
    TrainOptions kopt = spec.ranker_training;
    kopt.seed = derive_seed(fold_seed, 6);
    if (!ksamples.empty()) models.ranker = train_ranker(ksamples, kopt, {}, spec.fps);

    parallel_for(fold.test.size(), spec.jobs, [&](std::size_t t) {
      const std::size_t i = fold.test[t];
      ClipResult& r = results[i];
      r.fold = static_cast<int>(f);
      for (std::size_t v = 0; v < versions.size(); ++v) {
        TrackOutput out = annotate(*prepared[i], versions[v], models);
        r.metrics[v] = clip_metrics(out.final, clips[i]->ground_truth, clips[i]->id);
        if (versions[v].version == Version::V4) r.v4 = std::move(out);
      }
    });

    const auto train_ids = ids_of(clips, fold.train);
    fold_records.push_back({{"fold", f},
                            {"test", ids_of(clips, fold.test)},
                            {"train", train_ids},
                            {"params_trained_on", train_ids},
                            {"refiner_trained_on", train_ids},
                            {"ranker_trained_on", train_ids},
                            {"params",
                             {{"v1", params_to_json(models.v1)},
                              {"v2", params_to_json(models.v2)},
                              {"v3", params_to_json(models.v3)}}},
                            {"search_objective", {{"v1", s1.objective}, {"v2", s2.objective}, {"v3", s3.objective}}},
                            {"refiner_samples", rsamples.size()},
                            {"ranker_samples", ksamples.size()}});
  }

  BenchmarkOutput out;
  nlohmann::json& report = out.report;
  report["suite"] = {{"seed", spec.seed},
                     {"n_clips", spec.n_clips},
                     {"duration_s", spec.duration_s},
                     {"fps", spec.fps},
                     {"gps_sigma_m", spec.gps_sigma_m},
                     {"gps_bias_max_m", spec.gps_bias_max_m},
                     {"gps_lag_s", spec.gps_lag_s},
                     {"distractors", spec.distractors},
                     {"shadow_prob", spec.shadow_prob},
                     {"search_budget", spec.search_budget}};

  // Ablation over held-out clips.
  nlohmann::json ablation = nlohmann::json::array();
  for (std::size_t v = 0; v < versions.size(); ++v) {
    std::vector<double> p, nd, u;
    for (const auto& r : results) {
      p.push_back(r.metrics[v].precision_at_iou_05);
      nd.push_back(r.metrics[v].median_nd);
      u.push_back(r.metrics[v].mean_iou);
    }
    ablation.push_back({{"version", versions[v].name()},
                        {"precision", num(mean(p))},
                        {"median_nd", num(mean(nd))},
                        {"mean_iou", num(mean(u))},
                        {"clips", p.size()}});
  }
  report["ablation"] = ablation;

  nlohmann::json per_clip = nlohmann::json::array();
  for (std::size_t i = 0; i < n; ++i) {
    nlohmann::json row = {{"clip", clips[i]->id},
                          {"fold", results[i].fold},
                          {"factors",
                           {{"gps_sigma_m", clips[i]->factors.gps_sigma_m},
                            {"gps_bias_m", clips[i]->factors.gps_bias_m},
                            {"gps_lag_s", clips[i]->factors.gps_lag_s},
                            {"distractors", clips[i]->factors.distractors},
                            {"shadow", clips[i]->factors.shadow}}}};
    for (std::size_t v = 0; v < versions.size(); ++v) {
      const ClipMetrics& m = results[i].metrics[v];
      row[versions[v].name()] = {{"precision", m.precision_at_iou_05},
                                 {"median_nd", num(m.median_nd)},
                                 {"mean_iou", m.mean_iou},
                                 {"out_of_frame_accuracy", num(m.out_of_frame_accuracy)}};
    }
    per_clip.push_back(row);
  }
  report["clips"] = per_clip;

  // Annotation pool: V4 boxes on held-out frames.
  std::vector<ScoredBox> pool;
  std::vector<double> scores, ious;
  for (std::size_t i = 0; i < n; ++i) {
    const Clip& clip = *clips[i];
    const TrackOutput& v4 = results[i].v4;
    for (std::size_t fr = 0; fr < v4.final.size(); ++fr) {
      if (!v4.final[fr]) continue;
      const BoundingBox& b = *v4.final[fr];
      const double score = *v4.scores[fr];
      out.annotations.push_back({{"clip", clip.id},
                                 {"frame", fr},
                                 {"cx", b.cx},
                                 {"cy", b.cy},
                                 {"w", b.w},
                                 {"h", b.h},
                                 {"score", score},
                                 {"fold", results[i].fold}});
      if (!clip.ground_truth[fr]) continue;
      const BoundingBox& g = *clip.ground_truth[fr];
      pool.push_back({{clip.id, static_cast<int>(fr), b, score}, iou(b, g), normalized_distance(b, g)});
      scores.push_back(score);
      ious.push_back(pool.back().iou);
    }
    for (std::size_t fr = 0; fr < clip.ground_truth.size(); ++fr) {
      const auto& g = clip.ground_truth[fr];
      out.ground_truth.push_back({{"clip", clip.id}, {"frame", fr}, {"box", g ? box_json(*g) : nlohmann::json()}});
    }
  }
  // Ranked positions for the exported annotations (inter-video pool).
  {
    std::vector<Annotation> all;
    for (const auto& a : out.annotations)
      all.push_back({a["clip"].get<std::string>(), a["frame"].get<int>(), {}, a["score"].get<double>()});
    const auto ranked = rank(all, Policy::Inter);
    std::map<std::pair<std::string, int>, double> pct;
    for (const auto& r : ranked) pct[{r.annotation.clip, r.annotation.frame}] = r.percentile;
    for (auto& a : out.annotations) a["percentile"] = pct.at({a["clip"].get<std::string>(), a["frame"].get<int>()});
  }

  auto curve_json = [&](const std::vector<PurificationRow>& rows) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows)
      j.push_back({{"fraction", r.fraction}, {"kept", r.kept}, {"precision", r.precision}, {"median_nd", num(r.median_nd)}});
    return j;
  };
  std::vector<ScoredBox> oracle = pool;
  for (auto& b : oracle) b.annotation.score = b.iou;
  report["purification"] = {{"intra", curve_json(purification_curve(pool, Policy::Intra, spec.keep_fractions))},
                            {"inter", curve_json(purification_curve(pool, Policy::Inter, spec.keep_fractions))},
                            {"oracle", curve_json(purification_curve(oracle, Policy::Inter, spec.keep_fractions))},
                            {"pool_size", pool.size()}};
  report["ranker"] = {{"spearman", num(spearman(scores, ious))}};

  // Factor breakdown over held-out clips.
  auto bucket = [&](const std::string& factor, auto label_of) {
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < n; ++i) groups[label_of(clips[i]->factors)].push_back(i);
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& [label, idx] : groups) {
      nlohmann::json row = {{"factor", factor}, {"level", label}, {"clips", idx.size()}};
      for (std::size_t v = 0; v < versions.size(); ++v) {
        std::vector<double> p;
        for (auto i : idx) p.push_back(results[i].metrics[v].precision_at_iou_05);
        row[versions[v].name()] = num(mean(p));
      }
      rows.push_back(row);
    }
    return rows;
  };
  nlohmann::json factors = nlohmann::json::array();
  for (auto& rows : {bucket("gps_bias", [](const ScenarioFactors& f) { return f.gps_bias_m < 2.5 ? "<2.5m" : ">=2.5m"; }),
                     bucket("gps_lag", [](const ScenarioFactors& f) { return f.gps_lag_s < 1.0 ? "<1s" : ">=1s"; }),
                     bucket("distractors", [](const ScenarioFactors& f) { return std::to_string(f.distractors); }),
                     bucket("shadow", [](const ScenarioFactors& f) { return f.shadow ? "yes" : "no"; })})
    for (const auto& r : rows) factors.push_back(r);
  report["factors"] = factors;

  if (spec.compare_mixtures) {
    const std::array<std::pair<const char*, ProposalParams>, 3> mixtures{
        {{"mixture_a", ProposalParams::mixture_a()},
         {"mixture_b", ProposalParams::mixture_b()},
         {"mixture_c", ProposalParams::mixture_c()}}};
    std::vector<std::array<MixtureQuality, 3>> q(n);
    parallel_for(n, spec.jobs, [&](std::size_t i) {
      for (std::size_t m = 0; m < 3; ++m)
        q[i][m] = mixture_quality(*clips[i], m == 2 ? prepared[i]->proposal.frames
                                                    : run_proposal(*clips[i], mixtures[m].second).frames);
    });
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t m = 0; m < 3; ++m) {
      std::vector<double> cov, cpf;
      for (const auto& x : q) {
        cov.push_back(x[m].coverage);
        cpf.push_back(x[m].candidates_per_frame);
      }
      rows.push_back({{"mixture", mixtures[m].first}, {"coverage", mean(cov)}, {"candidates_per_frame", mean(cpf)}});
    }
    report["mixtures"] = rows;
  }

  // Provenance: which clips trained what, and a self-check.
  bool clean = true;
  for (const auto& f : folds) {
    const std::set<std::size_t> train(f.train.begin(), f.train.end());
    for (auto t : f.test) clean = clean && !train.contains(t);
  }
  std::set<std::size_t> tested;
  for (const auto& f : folds) tested.insert(f.test.begin(), f.test.end());
  clean = clean && tested.size() == n;
  report["provenance"] = {{"folds", fold_records}, {"held_out_only", clean}};

  out.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return out;
}

}  // namespace geobox
