#pragma once

// Seeded training fixtures shared by the unit tests and the acceptance run.

#include <vector>

#include "geobox/evaluation.hpp"
#include "geobox/ranking.hpp"
#include "geobox/refine.hpp"
#include "geobox/simulator.hpp"

namespace fixtures {

// Ground-truth runs of suite clips [first, first + count).
inline std::vector<geobox::BoxSequence> clean_runs(int first, int count, std::uint64_t seed = 2024) {
  geobox::SuiteSpec suite;
  suite.seed = seed;
  std::vector<geobox::BoxSequence> out;
  for (int i = first; i < first + count; ++i) {
    const geobox::Clip c = geobox::generate_scenario(geobox::suite_scenario(suite, i));
    geobox::BoxSequence run{c.fps, {}};
    for (const auto& b : c.ground_truth) {
      if (b) {
        run.boxes.push_back(*b);
      } else if (!run.boxes.empty()) {
        if (run.boxes.size() >= 20) out.push_back(run);
        run.boxes.clear();
      }
    }
    if (run.boxes.size() >= 20) out.push_back(run);
  }
  return out;
}

// Refiner trained on corrupted copies of clips 0-5; clips 6 and up stay unseen.
inline geobox::RefinerModel trained_refiner(geobox::TrainLog* log = nullptr, int epochs = 30) {
  geobox::Rng rng(17);
  std::vector<geobox::RefinerSample> samples;
  for (const auto& run : clean_runs(0, 6))
    for (int k = 0; k < 2; ++k) samples.push_back(geobox::corrupt_sequence(run, {}, rng));
  geobox::TrainOptions opt;
  opt.epochs = epochs;
  opt.seed = 3;
  return geobox::train_refiner(samples, opt, {}, 10, log);
}

// Width spike of `factor` at the middle frame of an otherwise constant sequence.
struct Spike {
  geobox::BoxSequence input;
  std::size_t frame = 0;
  double clean_width = 0.0;
};

inline Spike width_spike(double factor, std::size_t n = 60) {
  Spike s;
  s.clean_width = 30.0;
  s.input = {10, std::vector<geobox::BoundingBox>(n, geobox::BoundingBox{320, 200, s.clean_width, 70})};
  s.frame = n / 2;
  s.input.boxes[s.frame].w *= factor;
  return s;
}

// Share of the injected spike that refinement removed (1 = fully removed).
inline double spike_reduction(const geobox::RefinerModel& model, const Spike& s) {
  const geobox::BoxSequence out = geobox::refine(s.input, model);
  const double before = std::abs(s.input.boxes[s.frame].w - s.clean_width);
  const double after = std::abs(out.boxes[s.frame].w - s.clean_width);
  return 1.0 - after / before;
}

// Ranker trained on corrupted runs of clips 0-5, labelled with IoU against the clean run.
inline std::vector<geobox::RankerSample> ranker_samples(int first, int count, std::uint64_t seed) {
  geobox::Rng rng(seed);
  std::vector<geobox::RankerSample> out;
  for (const auto& run : clean_runs(first, count))
    for (int k = 0; k < 2; ++k) {
      const geobox::RefinerSample c = geobox::corrupt_sequence(run, {}, rng);
      geobox::RankerSample s{c.input, {}, {}};
      for (std::size_t i = 0; i < run.boxes.size(); ++i) s.label.push_back(geobox::iou(c.input.boxes[i], run.boxes[i]));
      out.push_back(std::move(s));
    }
  return out;
}

inline geobox::RankerModel trained_ranker(geobox::TrainLog* log = nullptr, int epochs = 20) {
  geobox::TrainOptions opt;
  opt.epochs = epochs;
  opt.seed = 5;
  return geobox::train_ranker(ranker_samples(0, 6, 23), opt, {}, 10, log);
}

}  // namespace fixtures
