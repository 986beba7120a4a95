#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "geobox/refine.hpp"

namespace geobox {

/// x - smooth_sequence(x), per channel.
Tensor high_pass(const Tensor& x, int window);
Tensor high_pass(const BoxSequence& x, double window_s);

struct RankerConfig {
  double highpass_s = 1.0;
  std::array<double, 3> kernel_s{0.5, 1.0, 2.0};
  int conv_channels = 8;
  int dense1 = 16;
  int dense2 = 8;
};

/// conv1 (4 -> 8) -> conv2 (8 -> 8) -> concat with conv1 -> conv3 (16 -> 8),
/// then dense 8 -> 16 -> 8 -> 1 with a sigmoid output. Convs and hidden dense
/// layers use relu.
class RankerModel {
 public:
  explicit RankerModel(const RankerConfig& config = {}, int fps = 10, std::uint64_t seed = 0);

  const RankerConfig& config() const { return config_; }
  int fps() const { return fps_; }
  std::size_t kernel(int layer) const;

  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

  // Feature standardization fitted on the training set.
  std::array<double, 4> feature_mean{};
  std::array<double, 4> feature_std{1.0, 1.0, 1.0, 1.0};

  /// High-passed boxes divided by the locally smoothed box diagonal, before standardization.
  Tensor raw_features(const BoxSequence& x) const;
  Tensor features(const BoxSequence& x) const;

  nlohmann::json to_json() const;
  static RankerModel from_json(const nlohmann::json& j);

 private:
  RankerConfig config_;
  int fps_;
  ParamStore store_;
};

/// One score in (0, 1) per frame.
std::vector<double> score_quality(const BoxSequence& x, const RankerModel& model);

/// Scores every contiguous run of present boxes; absent frames get nullopt.
std::vector<std::optional<double>> score_track(const std::vector<std::optional<BoundingBox>>& boxes,
                                               const RankerModel& model);

/// L2 loss of the model on standardized features, with gradients when grads != nullptr.
double ranker_loss(const RankerModel& model, const Tensor& features, std::span<const double> labels,
                   std::span<const double> mask, ParamStore* grads);

struct RankerSample {
  BoxSequence boxes;
  std::vector<double> label;  // IoU against ground truth, in [0, 1]
  std::vector<double> mask;   // empty means all frames count
};

RankerModel train_ranker(std::span<const RankerSample> samples, const TrainOptions& options,
                         const RankerConfig& config = {}, int fps = 10, TrainLog* log = nullptr);

enum class Policy { Intra, Inter };

struct Annotation {
  std::string clip;
  int frame = 0;
  BoundingBox box;
  double score = 0.0;
};

struct RankedAnnotation {
  Annotation annotation;
  int position = 0;           // 1-based rank inside its pool
  int pool_size = 0;
  double percentile = 0.0;    // position / pool_size * 100
};

/// Sorted by descending score (stable, ties by clip then frame) within each
/// pool: one pool per clip for Intra, a single pool for Inter. Output is
/// ordered by clip for Intra and by position for Inter.
std::vector<RankedAnnotation> rank(std::span<const Annotation> annotations, Policy policy);

/// Keeps the best ceil(percent / 100 * pool_size) entries of every pool.
std::vector<RankedAnnotation> keep_top(std::span<const RankedAnnotation> ranked, double percent);

/// An annotation paired with its metric against ground truth.
struct ScoredBox {
  Annotation annotation;
  double iou = 0.0;
  double nd = 0.0;
};

struct PurificationRow {
  double fraction = 1.0;
  std::size_t kept = 0;
  double precision = 0.0;
  double median_nd = 0.0;
};

std::vector<PurificationRow> purification_curve(std::span<const ScoredBox> boxes, Policy policy,
                                                std::span<const double> fractions);

/// Spearman rank correlation (average ranks for ties).
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace geobox
