#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "geobox/random.hpp"
#include "json.hpp"

namespace geobox {

/// Row-major N x C array of float64 (time steps by channels).
struct Tensor {
  std::size_t n = 0;
  std::size_t c = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0) : n(rows), c(cols), data(rows * cols, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * c + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * c + j]; }
  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct Param {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<double> m;  // Adam first moment
  std::vector<double> v;  // Adam second moment
};

/// Named parameters with gradients and optimizer state.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed), rng_(seed) {}

  /// Xavier-uniform initialization, +-sqrt(6 / (fan_in + fan_out)).
  Param& add(const std::string& name, std::vector<std::size_t> shape, std::size_t fan_in, std::size_t fan_out);
  /// Zero-initialized (biases).
  Param& add_zeros(const std::string& name, std::vector<std::size_t> shape);

  Param& operator[](const std::string& name);
  const Param& operator[](const std::string& name) const;

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }

  void zero_grad();
  std::uint64_t seed() const { return seed_; }
  std::int64_t step = 0;

  nlohmann::json to_json() const;
  /// Restores values into an already-built store; throws ConfigError on a shape mismatch.
  void load_json(const nlohmann::json& j);

 private:
  std::uint64_t seed_;
  Rng rng_;
  std::vector<Param> params_;
};

// Layers. Each backward accumulates parameter gradients into the given spans
// and returns the gradient with respect to the input.

/// Same-length cross-correlation with zero padding; kernel is [k][cin][cout].
Tensor conv1d(const Tensor& x, std::span<const double> kernel, std::span<const double> bias, std::size_t k);
Tensor conv1d_backward(const Tensor& x, std::span<const double> kernel, std::size_t k, const Tensor& dy,
                       std::span<double> dkernel, std::span<double> dbias);

/// y = x W + b with W stored [cin][cout].
Tensor dense(const Tensor& x, std::span<const double> weight, std::span<const double> bias);
Tensor dense_backward(const Tensor& x, std::span<const double> weight, const Tensor& dy, std::span<double> dweight,
                      std::span<double> dbias);

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& dy);
Tensor sigmoid(const Tensor& x);
/// Takes the sigmoid output, not its input.
Tensor sigmoid_backward(const Tensor& y, const Tensor& dy);

/// Column concatenation [a | b].
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Losses average over the rows with a nonzero mask entry (all rows when the
// mask is empty) and every channel. The gradient is written when grad != nullptr.
double loss_l1(const Tensor& pred, const Tensor& target, std::span<const double> mask = {}, Tensor* grad = nullptr);
double loss_l2(const Tensor& pred, const Tensor& target, std::span<const double> mask = {}, Tensor* grad = nullptr);

enum class Schedule { Constant, Cosine };

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Schedule schedule = Schedule::Constant;
  std::int64_t total_steps = 0;  // cosine horizon
};

void adam_step(ParamStore& store, const AdamConfig& config);

}  // namespace geobox
