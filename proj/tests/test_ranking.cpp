#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "geobox/error.hpp"
#include "geobox/ranking.hpp"

using namespace geobox;

namespace {

Tensor column(std::vector<double> v) {
  Tensor t(v.size(), 1);
  t.data = std::move(v);
  return t;
}

Annotation ann(std::string clip, int frame, double score) { return {std::move(clip), frame, {0, 0, 10, 10}, score}; }

std::vector<std::string> clips_of(const std::vector<RankedAnnotation>& r) {
  std::vector<std::string> out;
  for (const auto& a : r) out.push_back(a.annotation.clip);
  return out;
}

}  // namespace

TEST_CASE("high-pass filter") {
  const Tensor h = high_pass(column({0, 0, 3, 0, 0}), 3);
  const std::vector<double> want{0, -1, 2, -1, 0};
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(h.data[i] - want[i]) < 1e-12);
  for (double v : high_pass(column({7, 7, 7, 7, 7, 7}), 5).data) CHECK(std::abs(v) < 1e-12);

  BoxSequence a{10, {}}, b{10, {}};
  for (int i = 0; i < 25; ++i) {
    a.boxes.push_back({100.0 + 3 * (i % 4), 50, 20.0 + (i % 3), 40});
    b.boxes.push_back({a.boxes.back().cx + 80, 130, a.boxes.back().w, 40});
  }
  const Tensor ha = high_pass(a, 1.0), hb = high_pass(b, 1.0);
  for (std::size_t e = 0; e < ha.data.size(); ++e) CHECK(std::abs(ha.data[e] - hb.data[e]) < 1e-9);
}

TEST_CASE("scores live in (0, 1) and saturate with a forced output bias") {
  const auto runs = fixtures::clean_runs(8, 1);
  RankerModel model({}, 10, 4);
  for (double s : score_quality(runs.front(), model)) {
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
  model.store()["fc3.b"].value[0] = 1e3;
  for (double s : score_quality(runs.front(), model)) CHECK(s == doctest::Approx(1.0));

  std::vector<std::optional<BoundingBox>> track(runs.front().boxes.begin(), runs.front().boxes.begin() + 30);
  track[10].reset();
  const auto scored = score_track(track, model);
  CHECK_FALSE(scored[10].has_value());
  CHECK(scored[9].has_value());
  CHECK(scored[11].has_value());
}

TEST_CASE("ranker training") {
  TrainLog log0;
  const RankerModel init = fixtures::trained_ranker(&log0, 0);
  CHECK(init.store().to_json() == RankerModel({}, 10, 5).store().to_json());

  TrainLog log;
  const RankerModel a = fixtures::trained_ranker(&log, 6);
  REQUIRE(log.epoch_loss.size() == 7);
  CHECK(log.epoch_loss.back() < log.epoch_loss.front());
  CHECK(a.to_json() == fixtures::trained_ranker(nullptr, 6).to_json());
  CHECK_THROWS_AS(train_ranker({}, {}), ConfigError);
}

TEST_CASE("trained ranker separates clean from corrupted frames") {
  const RankerModel model = fixtures::trained_ranker();
  const auto spike = fixtures::width_spike(3.0);
  const auto scores = score_quality(spike.input, model);
  CHECK(scores[spike.frame] < scores[5]);

  // held-out: mean score on clean runs above mean score on spiked frames
  double clean = 0.0, spiked = 0.0;
  int nc = 0, ns = 0;
  for (const auto& s : fixtures::ranker_samples(20, 4, 77)) {
    const auto q = score_quality(s.boxes, model);
    for (std::size_t i = 0; i < q.size(); ++i) {
      if (s.label[i] > 0.9) clean += q[i], ++nc;
      if (s.label[i] < 0.5) spiked += q[i], ++ns;
    }
  }
  REQUIRE(nc > 0);
  REQUIRE(ns > 0);
  CHECK(clean / nc > spiked / ns);
  CHECK(RankerModel::from_json(model.to_json()).to_json() == model.to_json());
}

TEST_CASE("intra vs inter ranking") {
  SUBCASE("one clip: both policies agree") {
    const std::vector<Annotation> a{ann("a", 0, 0.3), ann("a", 1, 0.9), ann("a", 2, 0.5)};
    const auto intra = rank(a, Policy::Intra), inter = rank(a, Policy::Inter);
    REQUIRE(intra.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(intra[i].annotation.frame == inter[i].annotation.frame);
      CHECK(intra[i].position == inter[i].position);
    }
    CHECK(inter[0].annotation.frame == 1);
    CHECK(inter[2].percentile == doctest::Approx(100.0));
  }
  SUBCASE("clip A scores above clip B") {
    std::vector<Annotation> a;
    for (int f = 0; f < 4; ++f) a.push_back(ann("A", f, 0.9 - 0.01 * f));
    for (int f = 0; f < 4; ++f) a.push_back(ann("B", f, 0.2 - 0.01 * f));
    const auto inter = keep_top(rank(a, Policy::Inter), 50);
    CHECK(clips_of(inter) == std::vector<std::string>{"A", "A", "A", "A"});
    const auto intra = keep_top(rank(a, Policy::Intra), 50);
    const auto kept = clips_of(intra);
    CHECK(std::count(kept.begin(), kept.end(), "A") == 2);
    CHECK(std::count(kept.begin(), kept.end(), "B") == 2);
  }
  SUBCASE("ties break by clip then frame") {
    const std::vector<Annotation> a{ann("b", 1, 0.5), ann("a", 3, 0.5), ann("a", 2, 0.5)};
    const auto r = rank(a, Policy::Inter);
    CHECK(r[0].annotation.clip == "a");
    CHECK(r[0].annotation.frame == 2);
    CHECK(r[1].annotation.frame == 3);
    CHECK(r[2].annotation.clip == "b");
  }
  SUBCASE("input order does not matter") {
    std::vector<Annotation> a;
    Rng rng(6);
    for (int f = 0; f < 40; ++f) a.push_back(ann(f % 3 ? "x" : "y", f, std::round(rng.uniform() * 10) / 10));
    const auto ref = rank(a, Policy::Inter);
    for (int k = 0; k < 5; ++k) {
      for (std::size_t i = a.size() - 1; i > 0; --i) std::swap(a[i], a[rng.uniform_int(0, static_cast<int>(i))]);
      const auto r = rank(a, Policy::Inter);
      for (std::size_t i = 0; i < r.size(); ++i) {
        CHECK(r[i].annotation.clip == ref[i].annotation.clip);
        CHECK(r[i].annotation.frame == ref[i].annotation.frame);
      }
    }
  }
  SUBCASE("keep_top counts") {
    std::vector<Annotation> a;
    for (int f = 0; f < 7; ++f) a.push_back(ann("c", f, f * 0.1));
    const auto r = rank(a, Policy::Intra);
    CHECK(keep_top(r, 100).size() == 7);
    CHECK(keep_top(r, 50).size() == 4);
    CHECK(keep_top(r, 10).size() == 1);
    CHECK(keep_top(r, 0).empty());
  }
}

TEST_CASE("purification curves") {
  // clip "good": all correct; clip "bad": mostly wrong but scored with an intra-clip spread
  std::vector<ScoredBox> boxes;
  for (int f = 0; f < 10; ++f) boxes.push_back({ann("good", f, 0.8 + 0.01 * f), 0.8, 0.1});
  for (int f = 0; f < 10; ++f) boxes.push_back({ann("bad", f, 0.3 + 0.01 * f), f >= 8 ? 0.7 : 0.1, f >= 8 ? 0.2 : 2.0});
  const std::vector<double> fractions{0.1, 0.5, 1.0};

  const auto inter = purification_curve(boxes, Policy::Inter, fractions);
  const auto intra = purification_curve(boxes, Policy::Intra, fractions);
  CHECK(inter[2].kept == 20);
  CHECK(inter[2].precision == doctest::Approx(0.6));
  CHECK(inter[1].precision == doctest::Approx(1.0));
  CHECK(intra[1].precision == doctest::Approx(0.7));
  CHECK(inter[1].precision >= intra[1].precision);
  CHECK(intra[2].precision == inter[2].precision);

  auto oracle = boxes;
  for (auto& b : oracle) b.annotation.score = b.iou;
  const std::vector<double> all{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  const auto curve = purification_curve(oracle, Policy::Inter, all);
  for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].precision <= curve[i - 1].precision);
}

TEST_CASE("spearman") {
  const std::vector<double> a{1, 2, 3, 4, 5};
  CHECK(spearman(a, std::vector<double>{2, 4, 6, 8, 10}) == doctest::Approx(1.0));
  CHECK(spearman(a, std::vector<double>{5, 4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(spearman(a, std::vector<double>{1, 8, 27, 64, 125}) == doctest::Approx(1.0));
  // ties get average ranks: ranks (1.5,1.5,3) vs (1,2,3)
  CHECK(spearman(std::vector<double>{1, 1, 2}, std::vector<double>{1, 2, 3}) == doctest::Approx(std::sqrt(3.0) / 2));
}
