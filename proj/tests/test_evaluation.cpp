#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "geobox/error.hpp"
#include "geobox/evaluation.hpp"
#include "geobox/matching.hpp"
#include "geobox/pipeline.hpp"
#include "geobox/simulator.hpp"

using namespace geobox;

namespace {

using Track = std::vector<std::optional<BoundingBox>>;

SuiteSpec small_suite() {
  SuiteSpec s;
  s.n_clips = 6;
  s.duration_s = 20.0;
  s.search_budget = 6;
  s.refiner_training.epochs = 4;
  s.ranker_training.epochs = 4;
  s.compare_mixtures = false;
  return s;
}

}  // namespace

TEST_CASE("median") {
  CHECK(median({3, 1, 2}) == 2.0);
  CHECK(median({4, 1, 2, 3}) == 2.5);
  CHECK(std::isnan(median({})));
}

TEST_CASE("clip metrics") {
  const BoundingBox g{50, 50, 10, 10};
  SUBCASE("perfect prediction") {
    const Track gt(5, g);
    const ClipMetrics m = clip_metrics(gt, gt, "c");
    CHECK(m.precision_at_iou_05 == 1.0);
    CHECK(m.median_nd == 0.0);
    CHECK(m.mean_iou == 1.0);
  }
  SUBCASE("IoUs 0.6, 0.4, 0.7 give precision 2/3") {
    // same center and height: IoU is the width ratio
    const Track pred{BoundingBox{50, 50, 6, 10}, BoundingBox{50, 50, 4, 10}, BoundingBox{50, 50, 7, 10}};
    const ClipMetrics m = clip_metrics(pred, Track(3, g));
    CHECK(m.iou[0] == doctest::Approx(0.6));
    CHECK(m.precision_at_iou_05 == doctest::Approx(2.0 / 3.0));
    CHECK(m.mean_iou == doctest::Approx(1.7 / 3.0));
  }
  SUBCASE("NDs 0.1, 0.3, 0.5 give median 0.3") {
    const double d = std::hypot(10.0, 10.0);
    const Track pred{BoundingBox{50 + 0.1 * d, 50, 10, 10}, BoundingBox{50 + 0.3 * d, 50, 10, 10},
                     BoundingBox{50, 50 + 0.5 * d, 10, 10}};
    CHECK(clip_metrics(pred, Track(3, g)).median_nd == doctest::Approx(0.3));
  }
  SUBCASE("missing prediction and out-of-view frames") {
    const Track gt{g, g, std::nullopt, std::nullopt};
    const Track pred{g, std::nullopt, std::nullopt, g};
    const ClipMetrics m = clip_metrics(pred, gt);
    CHECK(m.frames == std::vector<int>{0, 1});
    CHECK(m.iou[1] == 0.0);
    CHECK(std::isinf(m.nd[1]));
    CHECK(m.precision_at_iou_05 == 0.5);
    CHECK(m.out_of_frame_frames == 2);
    CHECK(m.out_of_frame_accuracy == 0.5);
  }
  CHECK_THROWS(clip_metrics(Track(2, g), Track(3, g)));
}

TEST_CASE("three-fold split") {
  for (std::size_t n : {3u, 9u, 10u, 31u}) {
    const auto folds = three_fold_split(n, 7);
    std::multiset<std::size_t> seen;
    for (const auto& f : folds) {
      seen.insert(f.test.begin(), f.test.end());
      CHECK(f.train.size() + f.test.size() == n);
      for (auto t : f.test) CHECK(std::find(f.train.begin(), f.train.end(), t) == f.train.end());
    }
    CHECK(seen.size() == n);
    CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == n);
    if (n == 9)
      for (const auto& f : folds) CHECK(f.test.size() == 3);
    if (n == 10) {
      std::multiset<std::size_t> sizes;
      for (const auto& f : folds) sizes.insert(f.test.size());
      CHECK(sizes == std::multiset<std::size_t>{3, 3, 4});
    }
  }
  CHECK(three_fold_split(12, 1)[0].test == three_fold_split(12, 1)[0].test);
  CHECK_THROWS_AS(three_fold_split(2, 1), TooFewClips);
  SuiteSpec empty;
  empty.n_clips = 0;
  CHECK_THROWS_AS(run_benchmark(empty), TooFewClips);
}

TEST_CASE("noiseless GPS: HMM at least as good as the nearest box") {
  ScenarioSpec s;
  s.seed = 11;
  s.duration_s = 30.0;
  s.n_objects = 3;
  s.near_fraction = 1.0;
  s.gps_noise = {};
  s.gps_noise.gaussian_sigma_m = 0.0;
  const Clip clip = generate_scenario(s);
  const auto prep = prepare_clip(clip);
  const StageModels models = StageModels::uniform(HmmParams{});
  const auto base = clip_metrics(annotate(*prep, AblationConfig::of(Version::Base), models).final, clip.ground_truth);
  const auto v1 = clip_metrics(annotate(*prep, AblationConfig::of(Version::V1), models).final, clip.ground_truth);
  CHECK(v1.precision_at_iou_05 >= base.precision_at_iou_05);
  CHECK(v1.precision_at_iou_05 >= 0.8);
}

TEST_CASE("suite validation") {
  SuiteSpec s;
  s.gps_sigma_m = {5, 2};
  CHECK_THROWS_AS(validate(s), ConfigError);
  s = {};
  s.keep_fractions = {0.0};
  CHECK_THROWS_AS(validate(s), ConfigError);
  CHECK_NOTHROW(validate(SuiteSpec{}));
}

TEST_CASE("small benchmark") {
  const SuiteSpec spec = small_suite();
  const BenchmarkOutput a = run_benchmark(spec);
  const nlohmann::json& r = a.report;

  CHECK(r["ablation"].size() == 5);
  CHECK(r["clips"].size() == 6);
  CHECK(r["provenance"]["held_out_only"] == true);

  SUBCASE("deterministic") {
    const BenchmarkOutput b = run_benchmark(spec);
    CHECK(a.report.dump() == b.report.dump());
    REQUIRE(a.annotations.size() == b.annotations.size());
    for (std::size_t i = 0; i < a.annotations.size(); ++i) CHECK(a.annotations[i].dump() == b.annotations[i].dump());
  }
  SUBCASE("pooled precision recomputed from the exported boxes") {
    std::map<std::pair<std::string, int>, BoundingBox> gt;
    for (const auto& g : a.ground_truth)
      if (!g["box"].is_null())
        gt[{g["clip"], g["frame"]}] = {g["box"][0], g["box"][1], g["box"][2], g["box"][3]};
    int hits = 0, total = 0;
    for (const auto& x : a.annotations) {
      const auto it = gt.find({x["clip"], x["frame"]});
      if (it == gt.end()) continue;
      ++total;
      hits += iou(BoundingBox{x["cx"], x["cy"], x["w"], x["h"]}, it->second) >= 0.5;
    }
    const auto& all = r["purification"]["inter"].back();
    CHECK(all["fraction"] == 1.0);
    CHECK(all["kept"] == total);
    CHECK(all["precision"].get<double>() == doctest::Approx(static_cast<double>(hits) / total));
    CHECK(r["purification"]["pool_size"] == total);
  }
  SUBCASE("every clip is tested once, never by a model that saw it") {
    std::set<std::string> tested;
    for (const auto& f : r["provenance"]["folds"]) {
      for (const auto& c : f["test"]) {
        CHECK(tested.insert(c.get<std::string>()).second);
        for (const char* key : {"train", "params_trained_on", "refiner_trained_on", "ranker_trained_on"})
          for (const auto& t : f[key]) CHECK(t != c);
      }
    }
    CHECK(tested.size() == 6);
  }
}
