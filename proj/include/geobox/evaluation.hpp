#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "geobox/pipeline.hpp"
#include "geobox/simulator.hpp"
#include "json.hpp"

namespace geobox {

/// Median; the mean of the two middle values for an even count. NaN when empty.
double median(std::vector<double> values);

struct ClipMetrics {
  std::string clip_id;
  double precision_at_iou_05 = 0.0;
  double median_nd = 0.0;
  double mean_iou = 0.0;
  // Frames with a ground-truth box, in order, with their IoU and ND. A frame
  // without a prediction scores IoU 0 and ND +inf.
  std::vector<int> frames;
  std::vector<double> iou;
  std::vector<double> nd;
  // Frames where the target is out of view: share where the prediction is
  // out of view as well (NaN when there are none).
  int out_of_frame_frames = 0;
  double out_of_frame_accuracy = 0.0;
};

/// Throws ShapeMismatch on differing lengths, NoOverlapFrames without any ground-truth box.
ClipMetrics clip_metrics(std::span<const std::optional<BoundingBox>> pred,
                         std::span<const std::optional<BoundingBox>> gt, const std::string& clip_id = {});

struct AblationRow {
  Version version = Version::Base;
  double precision = 0.0;  // mean over clips
  double median_nd = 0.0;  // mean over clips of the clip median
  double mean_iou = 0.0;   // mean over clips
  int clips = 0;
};

std::vector<AblationRow> run_ablation(std::span<const PreparedClip* const> clips,
                                      std::span<const AblationConfig> configs, const StageModels& models);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded shuffle, then test folds of near-equal size. Throws TooFewClips below 3.
std::array<Fold, 3> three_fold_split(std::size_t n_clips, std::uint64_t seed);

/// Refiner training data from one clip: corrupted copies of every ground-truth
/// run, plus the V3 output runs with ground truth as target (frames without
/// ground truth or with ND >= 1 are masked out).
std::vector<RefinerSample> refiner_training_samples(const PreparedClip& clip, const TrackOutput& v3, int copies,
                                                    Rng& rng);

/// Ranker training data from one clip: V4 output runs labelled with their IoU
/// (0 where the target is out of view).
std::vector<RankerSample> ranker_training_samples(const PreparedClip& clip, const TrackOutput& v4);

struct SuiteSpec {
  std::uint64_t seed = 2024;
  int n_clips = 30;
  double duration_s = 40.0;
  int fps = 10;
  std::array<double, 2> gps_sigma_m{4.0, 8.0};
  double gps_bias_max_m = 1.0;
  std::array<double, 2> gps_lag_s{0.0, 0.5};
  double gps_stick_prob = 0.02;
  std::array<int, 2> distractors{2, 4};
  double near_fraction = 1.0;
  double shadow_prob = 0.1;
  double jitter_px = 0.5;
  double dropout = 0.01;
  int clutter_per_frame = 2;
  int search_budget = 40;
  TrainOptions refiner_training{.epochs = 30, .lr = 3e-3, .crop = 120, .seed = 0};
  TrainOptions ranker_training{.epochs = 20, .lr = 3e-3, .crop = 120, .seed = 0};
  int corruption_copies = 2;
  std::vector<double> keep_fractions{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  bool compare_mixtures = true;
  int jobs = 1;
};

/// Throws InvalidSpec.
void validate(const SuiteSpec& spec);

/// Scenario of the index-th suite clip (derived seed, sampled noise factors).
ScenarioSpec suite_scenario(const SuiteSpec& spec, int index);

struct BenchmarkOutput {
  nlohmann::json report;                    // deterministic per seed
  std::vector<nlohmann::json> annotations;  // held-out V4 boxes with scores
  std::vector<nlohmann::json> ground_truth;
  double wall_clock_s = 0.0;
};

BenchmarkOutput run_benchmark(const SuiteSpec& spec);

}  // namespace geobox
