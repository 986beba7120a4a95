// One PASS/FAIL line per acceptance criterion. Exit code 0 only if all pass.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <set>
#include <sstream>
#include <string>

#include <unistd.h>

#include "fixtures.hpp"
#include "geobox/error.hpp"
#include "geobox/evaluation.hpp"
#include "geobox/geometry.hpp"
#include "geobox/io.hpp"
#include "geobox/matching.hpp"
#include "geobox/pipeline.hpp"
#include "geobox/proposal.hpp"
#include "geobox/ranking.hpp"
#include "geobox/tensor.hpp"
#include "geobox/refine.hpp"
#include "geobox/report.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace geobox;
namespace fs = std::filesystem;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Check {
  bool ok = true;
  std::string detail;
  void require(bool cond, const std::string& what) {
    if (!cond && ok) detail = what;
    ok = ok && cond;
  }
};

int failures = 0;

void report(int id, const std::string& name, const Check& c, const std::string& values) {
  std::printf("[%s] criterion %2d: %s (%s)%s%s\n", c.ok ? "PASS" : "FAIL", id, name.c_str(), values.c_str(),
              c.ok ? "" : " -- ", c.ok ? "" : c.detail.c_str());
  std::fflush(stdout);
  if (!c.ok) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

bool close(double a, double b, double tol = 1e-12) { return std::abs(a - b) <= tol; }

// 1
void viterbi_criterion() {
  Check c;
  int lattices = 0, impossible = 0;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    Rng rng(derive_seed(9001, seed));
    const int frames = rng.uniform_int(1, 6);
    const double p_inf = seed % 2 ? 0.3 : 0.0;
    HmmLattice lat;
    std::vector<std::size_t> sizes;
    for (int n = 0; n < frames; ++n) sizes.push_back(static_cast<std::size_t>(rng.uniform_int(1, 4)));
    auto value = [&] { return rng.bernoulli(p_inf) ? -kInf : rng.uniform(-10.0, 0.0); };
    for (int n = 0; n < frames; ++n) {
      std::vector<double> em(sizes[static_cast<std::size_t>(n)]);
      for (auto& e : em) e = value();
      lat.log_emission.push_back(em);
    }
    for (int n = 0; n + 1 < frames; ++n) {
      std::vector<double> tr(sizes[static_cast<std::size_t>(n)] * sizes[static_cast<std::size_t>(n) + 1]);
      for (auto& t : tr) t = value();
      lat.log_transition.push_back(tr);
    }
    const auto want = oracle::brute_force_map(lat.log_emission, lat.log_transition);
    ++lattices;
    if (want.log_likelihood == -kInf) {
      ++impossible;
      bool threw = false;
      try {
        viterbi(lat);
      } catch (const AllPathsImpossible&) {
        threw = true;
      }
      c.require(threw, "impossible lattice did not throw");
      continue;
    }
    const MatchResult got = viterbi(lat);
    c.require(close(got.log_likelihood, want.log_likelihood, 1e-9) && got.state == want.states,
              "mismatch at seed " + std::to_string(seed));
  }
  report(1, "Viterbi equals brute-force MAP", c,
         std::to_string(lattices) + " lattices up to 6x4, " + std::to_string(impossible) + " infeasible");
}

// 2
void dbscan_criterion() {
  Check c;
  Rng rng(4242);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 200));
    std::vector<FramePoint> pts(n);
    std::vector<std::int64_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
      pts[i] = {rng.uniform(0, 250), rng.uniform(0, 250)};
      ids[i] = static_cast<std::int64_t>(7 + 2 * i);
    }
    const double eps = rng.uniform(5.0, 45.0);
    const int min_pts = rng.uniform_int(1, 6);
    auto near = [&](std::size_t i, std::size_t j) {
      return std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y) <= eps;
    };
    c.require(dbscan(pts, eps, min_pts) == oracle::dbscan(n, near, min_pts), "dbscan trial " + std::to_string(trial));

    AffinityTable table;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double r = rng.uniform();
        if (r < 0.6) table.add(ids[i], ids[j], 1.0);
        else if (r < 0.8) table.add(ids[i], ids[j], -0.5);
      }
    const auto want = oracle::dbscan(
        n, [&](std::size_t i, std::size_t j) { return near(i, j) && table.score(ids[i], ids[j]) > 0.0; }, min_pts);
    c.require(oracle::same_partition(dbscan_ac(pts, ids, eps, min_pts, table), want),
              "dbscan_ac trial " + std::to_string(trial));
  }
  report(2, "DBSCAN and DBSCAN-AC equal their references", c, "200 random instances each");
}

// 3
void formula_criterion() {
  Check c;
  const BoundingBox a = BoundingBox::from_corners(0, 0, 2, 2);
  c.require(iou(a, a) == 1.0, "iou self");
  c.require(iou(a, BoundingBox::from_corners(2, 0, 4, 2)) == 0.0, "iou touching");
  c.require(close(iou(a, BoundingBox::from_corners(1, 1, 3, 3)), 1.0 / 7.0), "iou 1/7");
  const BoundingBox gt{10, 10, 3, 4};
  c.require(close(normalized_distance({13, 14, 3, 4}, gt), 1.0), "nd 1");
  c.require(close(normalized_distance({10, 12.5, 3, 4}, gt), 0.5), "nd 0.5");
  c.require(iou(a, BoundingBox::from_corners(5, 5, 6, 6)) == 0.0, "iou disjoint");
  c.require(normalized_distance({10, 10, 7, 7}, gt) == 0.0, "nd coincident");
  c.require(shape_distance(2, 3, 2, 3) == 0.0, "shape distance equal");
  c.require(close(shape_distance(2, 2, 4, 2), 1.0) && close(shape_distance(1, 1, 2, 3), 3.0), "shape distance");

  // unit square onto a symmetric trapezoid: corners map exactly, far-edge midpoint stays centered
  const std::array<Correspondence, 4> unit{{{{0, 0}, {0, 0}}, {{1, 0}, {1, 0}}, {{1, 1}, {0.8, 1}}, {{0, 1}, {0.2, 1}}}};
  const Homography trap = Homography::fit(unit);
  for (const auto& k : unit) {
    const WorldPoint w = trap.to_world(k.frame);
    c.require(close(w.x, k.world.x, 1e-9) && close(w.y, k.world.y, 1e-9), "trapezoid corners");
  }
  c.require(close(trap.to_world({0.5, 1}).x, 0.5, 1e-12), "trapezoid far-edge midpoint");
  const Homography scale = Homography::from_matrix({{{2, 0, 0}, {0, 2, 0}, {0, 0, 1}}});
  c.require(close(scale.to_world({3, 4}).x, 6) && close(scale.to_world({3, 4}).y, 8), "scaling homography");
  const WorldPoint foot = bottom_center_world(scale, {10, 10, 4, 6});
  c.require(close(foot.x, 20) && close(foot.y, 26), "bottom-center contact point");

  // homography on a trapezoid vs an independent linear solve
  const std::array<Correspondence, 4> corr{{{{100, 400}, {-5, 0}},
                                            {{540, 400}, {5, 0}},
                                            {{420, 100}, {8, 30}},
                                            {{220, 100}, {-8, 30}}}};
  const Homography h = Homography::fit(corr);
  std::array<std::array<double, 4>, 4> pairs{};
  for (std::size_t i = 0; i < 4; ++i) pairs[i] = {corr[i].frame.x, corr[i].frame.y, corr[i].world.x, corr[i].world.y};
  const auto ref = oracle::homography(pairs);
  for (double x : {150.0, 320.0, 500.0})
    for (double y : {120.0, 250.0, 390.0}) {
      const WorldPoint w = h.to_world({x, y});
      const auto r = oracle::apply(ref, x, y);
      c.require(close(w.x, r[0], 1e-9) && close(w.y, r[1], 1e-9), "homography vs reference");
    }

  HmmParams p;
  p.sigma_emission = 3.0;
  LatticeState s;
  s.kind = StateKind::Candidate;
  s.cof = 1;
  s.world = {10, 20};
  s.bbox = {0, 0, 2, 2};
  c.require(emission_log_prob({{10, 20}, 0.0, std::nullopt}, s, p, false) == 0.0, "emission at d = 0");
  c.require(close(emission_log_prob({{16, 20}, 0.0, std::nullopt}, s, p, false), -1.0), "emission at 2 sigma");
  p.p_trans = 0.01;
  p.sigma_trans = 2.0;
  p.sigma_shape = 0.5;
  LatticeState t = s;
  c.require(transition_log_prob(s, t, p) == 0.0, "same COF, same shape");
  t.cof = 2;
  c.require(close(transition_log_prob(s, t, p), std::log(0.01)), "different COF at d = 0");
  t.world = {14, 20};
  t.bbox = {0, 0, 4, 2};
  c.require(close(transition_log_prob(s, t, p), std::log(0.01) - 2.0), "transition jump + shape");

  Tensor spike(5, 1);
  spike.data = {0, 0, 3, 0, 0};
  const Tensor sm = smooth_sequence(spike, 3), hp = high_pass(spike, 3);
  const std::vector<double> want_sm{0, 1, 1, 1, 0}, want_hp{0, -1, 2, -1, 0};
  for (std::size_t i = 0; i < 5; ++i)
    c.require(close(sm.data[i], want_sm[i]) && close(hp.data[i], want_hp[i]), "smoothing / high-pass");
  Tensor raw(2, 1), smooth(2, 1), gate(2, 1);
  raw.data = {0, 4};
  smooth.data = {2, 2};
  gate.data = {0.5, 0.5};
  c.require(mix(raw, smooth, gate).data == std::vector<double>{1, 3}, "gate mix");
  c.require(mix(raw, smooth, Tensor(2, 1, 0.0)) == raw && mix(raw, smooth, Tensor(2, 1, 1.0)) == smooth, "gate 0 / 1");

  Tensor x4(4, 1);
  x4.data = {0, 1, 0, 0};
  c.require(conv1d(x4, std::vector<double>{1, 1, 1}, std::vector<double>{0.0}, 3).data == std::vector<double>{1, 1, 1, 0},
            "conv1d all-ones kernel");
  Tensor pred(3, 2, 3.0), target(3, 2, 1.0);
  c.require(loss_l1(pred, target) == 2.0 && loss_l2(pred, target) == 4.0 && loss_l1(target, target) == 0.0,
            "L1 / L2 losses");

  const std::vector<std::optional<BoundingBox>> g3(3, BoundingBox{50, 50, 10, 10});
  const std::vector<std::optional<BoundingBox>> p3{BoundingBox{50, 50, 6, 10}, BoundingBox{50, 50, 4, 10},
                                                   BoundingBox{50, 50, 7, 10}};
  c.require(close(clip_metrics(p3, g3).precision_at_iou_05, 2.0 / 3.0), "precision 2/3");
  report(3, "formula examples", c,
         "IoU, ND, shape distance, homography, contact point, emission, transition, smoothing, high-pass, gate, conv, "
         "losses, precision");
}

// 4
void gradient_criterion() {
  Check c;
  std::string values;
  for (const auto& layer : gradcheck::layers()) {
    const auto r = gradcheck::run(layer, 20, 31337);
    c.require(gradcheck::passes(r), layer.name + " worst " + std::to_string(r.worst));
    values += layer.name + " " + fmt("%.1e", r.worst) + (r.skipped ? fmt(" (%.0f kinks skipped)", r.skipped) : "") + ", ";
  }
  values.resize(values.size() - 2);
  report(4, "finite-difference gradient checks, 20 shapes per layer", c, values);
}

// 5
void affinity_criterion() {
  Check c;
  // Two rigid groups walk in parallel 120 px apart for 2 s, then 30 px apart.
  auto group = [](std::vector<FlowTrack>& out, std::int64_t first, const std::function<FramePoint(int)>& center) {
    for (int k = 0; k < 6; ++k) {
      FlowTrack t;
      t.id = first + k;
      for (int f = 0; f < 40; ++f) {
        const FramePoint q = center(f);
        t.positions.push_back({q.x + 3.0 * std::cos(1.3 * k), q.y + 3.0 * std::sin(1.3 * k)});
      }
      t.moving.assign(t.positions.size(), 1);
      out.push_back(std::move(t));
    }
  };
  std::vector<FlowTrack> tracks;
  group(tracks, 0, [](int f) { return FramePoint{100.0 + 4.0 * f, 150.0}; });
  group(tracks, 100, [](int f) { return FramePoint{100.0 + 4.0 * f, f < 20 ? 270.0 : 180.0}; });
  auto mixed = [](const CandidateObject& o) {
    bool lo = false, hi = false;
    for (auto id : o.members) (id < 100 ? lo : hi) = true;
    return lo && hi;
  };
  ProposalParams basic;
  basic.sources = {{"basic-large", false, 50.0}};
  const auto merged = propose_candidates(tracks, 40, basic);
  const auto ac = propose_candidates(tracks, 40, {});
  int basic_merged = 0, ac_mixed = 0, ac_split = 0;
  for (std::size_t f = 20; f < 40; ++f) {
    basic_merged += merged[f].size() == 1 && mixed(merged[f][0]);
    int large = 0;
    for (const auto& o : ac[f]) {
      ac_mixed += mixed(o);
      large += o.source == 1;
    }
    ac_split += large == 2;
  }
  c.require(basic_merged == 20, "basic DBSCAN did not merge");
  c.require(ac_mixed == 0 && ac_split == 20, "affinity clustering merged the pair");
  report(5, "affinity keeps separated objects apart at 30 px", c,
         fmt("basic merged %.0f/20 frames, AC split %.0f/20 frames", basic_merged, ac_split));
}

double ablation(const nlohmann::json& r, const std::string& version, const char* key) {
  for (const auto& row : r["ablation"])
    if (row["version"] == version) return row[key].get<double>();
  throw std::runtime_error("missing version " + version);
}

double curve_at(const nlohmann::json& curve, double fraction) {
  for (const auto& row : curve)
    if (std::abs(row["fraction"].get<double>() - fraction) < 1e-9) return row["precision"].get<double>();
  throw std::runtime_error("missing fraction");
}

// 6
void ablation_criterion(const nlohmann::json& r, double wall_clock_s) {
  Check c;
  c.require(wall_clock_s < 600.0, "suite took longer than 10 minutes");
  const double base = ablation(r, "base", "precision"), v1 = ablation(r, "v1", "precision"),
               v3 = ablation(r, "v3", "precision");
  const double base_nd = ablation(r, "base", "median_nd"), v1_nd = ablation(r, "v1", "median_nd");
  c.require(v1 >= base + 0.20, "V1 < Base + 20 points");
  c.require(v3 >= v1, "V3 < V1");
  c.require(v1_nd <= base_nd / 2, "V1 median ND > Base / 2");
  report(6, "ablation: HMM and shape gains", c,
         fmt("precision Base %.3f V1 %.3f V3 %.3f; median ND Base %.2f", base, v1, v3, base_nd) + fmt(" V1 %.2f", v1_nd) +
             fmt("; suite ran in %.0f s", wall_clock_s));
}

// 7
void refinement_criterion(const nlohmann::json& r) {
  Check c;
  const double v3 = ablation(r, "v3", "mean_iou"), v4 = ablation(r, "v4", "mean_iou");
  c.require(v4 >= v3, "V4 mean IoU < V3");
  const double reduction = fixtures::spike_reduction(fixtures::trained_refiner(), fixtures::width_spike(3.0));
  c.require(reduction >= 0.5, "spike reduced by less than half");
  report(7, "refinement: IoU gain and spike suppression", c,
         fmt("mean IoU V3 %.3f V4 %.3f; 3x spike reduced by %.0f%%", v3, v4, 100 * reduction));
}

// 8
void purification_criterion(const nlohmann::json& r) {
  Check c;
  const auto& pur = r["purification"];
  const double all = curve_at(pur["inter"], 1.0), top50 = curve_at(pur["inter"], 0.5), top10 = curve_at(pur["inter"], 0.1);
  c.require(top50 >= all + 0.05, "inter top-50% < all + 5 points");
  c.require(top10 >= top50, "inter top-10% < top-50%");
  double prev = 2.0;
  for (const auto& row : pur["oracle"]) {
    c.require(row["precision"].get<double>() <= prev + 1e-12, "oracle curve increases");
    prev = row["precision"].get<double>();
  }
  report(8, "ranking purifies the annotation pool", c,
         fmt("inter top-10%% %.3f, top-50%% %.3f, all %.3f; intra top-50%% %.3f", top10, top50, all,
             curve_at(pur["intra"], 0.5)));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// 9
void determinism_criterion(const BenchmarkOutput& first, const SuiteSpec& spec) {
  Check c;
  const fs::path root = fs::temp_directory_path() / ("geobox_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  write_benchmark(first, (root / "a").string());
  write_benchmark(run_benchmark(spec), (root / "b").string());
  int compared = 0;
  for (const auto& e : fs::directory_iterator(root / "a")) {
    const auto name = e.path().filename();
    if (name == "timing.json") continue;
    ++compared;
    c.require(fs::exists(root / "b" / name) && slurp(e.path()) == slurp(root / "b" / name),
              name.string() + " differs");
  }
  c.require(compared >= 8, "too few outputs");
  fs::remove_all(root);

  // The per-command operations, each run twice from the same seed.
  auto simulate = [] {
    ScenarioSpec s;
    s.seed = 77;
    s.n_objects = 4;
    return to_jsonl(clip_to_jsonl(generate_scenario(s)));
  };
  c.require(simulate() == simulate(), "simulate differs");
  auto annotate_dump = [] {
    ScenarioSpec s;
    s.seed = 78;
    s.n_objects = 3;
    const Clip clip = generate_scenario(s);
    const auto prep = prepare_clip(clip);
    StageModels models = StageModels::uniform(HmmParams{});
    models.refiner = RefinerModel({}, clip.fps, 1);
    models.ranker = RankerModel({}, clip.fps, 2);
    const TrackOutput out = annotate(*prep, AblationConfig::of(Version::V4), models);
    nlohmann::json j = nlohmann::json::array();
    for (std::size_t f = 0; f < out.final.size(); ++f)
      j.push_back(out.final[f] ? nlohmann::json{out.final[f]->cx, out.final[f]->cy, out.final[f]->w, out.final[f]->h,
                                                *out.scores[f]}
                               : nlohmann::json());
    return j.dump();
  };
  c.require(annotate_dump() == annotate_dump(), "annotate differs");
  auto search = [] {
    SuiteSpec suite;
    suite.duration_s = 20.0;
    std::vector<std::unique_ptr<Clip>> clips;
    std::vector<std::unique_ptr<PreparedClip>> prepared;
    std::vector<MatchSetup> setups;
    for (int i = 0; i < 3; ++i) {
      clips.push_back(std::make_unique<Clip>(generate_scenario(suite_scenario(suite, i))));
      prepared.push_back(prepare_clip(*clips.back()));
      setups.push_back(prepared.back()->setup);
    }
    return params_to_json(search_staged(setups, 8, 5).v3.params).dump();
  };
  c.require(search() == search(), "search-params differs");
  c.require(fixtures::trained_refiner(nullptr, 3).to_json() == fixtures::trained_refiner(nullptr, 3).to_json(),
            "train-refiner differs");
  c.require(fixtures::trained_ranker(nullptr, 3).to_json() == fixtures::trained_ranker(nullptr, 3).to_json(),
            "train-ranker differs");
  report(9, "byte-identical outputs for the same seed", c,
         std::to_string(compared) + " benchmark files; simulate, annotate, search, refiner and ranker training");
}

// 10
void provenance_criterion(const nlohmann::json& r) {
  Check c;
  c.require(r["provenance"]["held_out_only"] == true, "held_out_only is false");
  std::set<std::string> tested;
  for (const auto& f : r["provenance"]["folds"])
    for (const auto& clip : f["test"]) {
      c.require(tested.insert(clip.get<std::string>()).second, "clip tested twice");
      for (const char* key : {"train", "params_trained_on", "refiner_trained_on", "ranker_trained_on"})
        for (const auto& t : f[key]) c.require(t != clip, clip.get<std::string>() + " in " + key);
    }
  c.require(tested.size() == r["clips"].size(), "not every clip is held out once");
  report(10, "held-out evaluation provenance", c,
         std::to_string(r["provenance"]["folds"].size()) + " folds, " + std::to_string(tested.size()) + " clips");
}

}  // namespace

int main() {
  try {
    viterbi_criterion();
    dbscan_criterion();
    formula_criterion();
    gradient_criterion();
    affinity_criterion();

    const SuiteSpec spec;
    const BenchmarkOutput bench = run_benchmark(spec);
    ablation_criterion(bench.report, bench.wall_clock_s);
    refinement_criterion(bench.report);
    purification_criterion(bench.report);
    determinism_criterion(bench, spec);
    provenance_criterion(bench.report);

    const double rho = bench.report["ranker"]["spearman"].get<double>();
    std::printf("[%s] not a numbered criterion: ranker score vs IoU Spearman >= 0.4 (%.3f)\n", rho >= 0.4 ? "PASS" : "FAIL",
                rho);
  } catch (const std::exception& e) {
    std::printf("[FAIL] acceptance run aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
