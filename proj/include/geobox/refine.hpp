#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "geobox/geometry.hpp"
#include "geobox/random.hpp"
#include "geobox/tensor.hpp"

namespace geobox {

struct BoxSequence {
  int fps = 10;
  std::vector<BoundingBox> boxes;

  std::size_t size() const { return boxes.size(); }
};

/// round(seconds * fps), bumped to the next odd number, at least 1.
int odd_window(double seconds, int fps);

Tensor to_tensor(std::span<const BoundingBox> boxes);
std::vector<BoundingBox> from_tensor(const Tensor& x);

/// Centered moving average per channel; indices past either end clamp to the edge.
Tensor smooth_sequence(const Tensor& x, int window);
/// Transpose of smooth_sequence (for backpropagation).
Tensor smooth_adjoint(const Tensor& dy, int window);
BoxSequence smooth_sequence(const BoxSequence& x, double window_s);

/// raw * (1 - gate) + smooth * gate, elementwise.
Tensor mix(const Tensor& raw, const Tensor& smooth, const Tensor& gate);

/// Per-sequence normalization: channel means removed, everything divided by
/// the mean box diagonal.
struct Normalization {
  std::array<double, 4> mean{};
  double scale = 1.0;

  static Normalization of(const Tensor& x);
  Tensor apply(const Tensor& x) const;
  Tensor invert(const Tensor& z) const;
};

struct RefinerConfig {
  double window_s = 0.3;  // smoothing window
  double kernel_s = 1.0;  // conv kernel
  int hidden = 16;
  int iterations = 16;
};

/// Gate head: conv(4 -> hidden, relu) -> dense(hidden -> hidden, relu) ->
/// dense(hidden -> 4, sigmoid). One set of weights serves every iteration.
class RefinerModel {
 public:
  explicit RefinerModel(const RefinerConfig& config = {}, int fps = 10, std::uint64_t seed = 0);

  const RefinerConfig& config() const { return config_; }
  int fps() const { return fps_; }
  int window() const { return odd_window(config_.window_s, fps_); }
  int kernel() const { return odd_window(config_.kernel_s, fps_); }

  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

  /// Test hook: a constant gate replaces the network output.
  std::optional<double> forced_gate;

  /// Gate for a normalized iterate, values in (0, 1).
  Tensor gate(const Tensor& z) const;

  nlohmann::json to_json() const;
  static RefinerModel from_json(const nlohmann::json& j);

 private:
  RefinerConfig config_;
  int fps_;
  ParamStore store_;
};

/// One filter step on a normalized sequence.
Tensor outlier_filter_once(const Tensor& z, const RefinerModel& model);

/// All iterations in normalized space, then denormalized with w, h >= 1.
BoxSequence refine(const BoxSequence& x, const RefinerModel& model);

/// Refines each contiguous run of present boxes independently.
std::vector<std::optional<BoundingBox>> refine_track(const std::vector<std::optional<BoundingBox>>& boxes,
                                                     const RefinerModel& model);

/// Normalized-space loss of refine(input) against target and its parameter
/// gradients (accumulated into the model's store).
double refiner_loss(const RefinerModel& model, const Tensor& input, const Tensor& target,
                    std::span<const double> mask, ParamStore* grads);

struct RefinerSample {
  BoxSequence input;
  std::vector<BoundingBox> target;
  std::vector<double> mask;  // per frame; empty means all frames count
};

struct CorruptionSpec {
  double spike_prob = 0.04;
  std::array<double, 2> spike_scale{1.5, 3.0};
  double oversize_per_s = 0.05;  // expected oversize segments per second
  std::array<double, 2> oversize_s{2.0, 3.0};
  std::array<double, 2> oversize_scale{1.5, 2.5};
  double jitter = 0.02;  // fraction of the box diagonal
};

/// Synthetic corrupted copy of a clean sequence; the clean one is the target.
RefinerSample corrupt_sequence(const BoxSequence& clean, const CorruptionSpec& spec, Rng& rng);

struct TrainOptions {
  int epochs = 30;
  double lr = 3e-3;
  int crop = 120;  // frames per training window, 0 for whole sequences
  std::uint64_t seed = 0;
};

/// Mean loss per epoch; entry 0 is measured before the first update.
struct TrainLog {
  std::vector<double> epoch_loss;
};

/// L1 end-to-end training with Adam. Throws Diverged on a non-finite loss.
RefinerModel train_refiner(std::span<const RefinerSample> samples, const TrainOptions& options,
                           const RefinerConfig& config = {}, int fps = 10, TrainLog* log = nullptr);

}  // namespace geobox
