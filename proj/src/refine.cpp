#include "geobox/refine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "geobox/error.hpp"

namespace geobox {

int odd_window(double seconds, int fps) {
  int w = std::max(1, static_cast<int>(std::lround(seconds * fps)));
  if (w % 2 == 0) ++w;
  return w;
}

Tensor to_tensor(std::span<const BoundingBox> boxes) {
  Tensor x(boxes.size(), 4);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    x(i, 0) = boxes[i].cx;
    x(i, 1) = boxes[i].cy;
    x(i, 2) = boxes[i].w;
    x(i, 3) = boxes[i].h;
  }
  return x;
}

std::vector<BoundingBox> from_tensor(const Tensor& x) {
  if (x.c != 4) throw ShapeMismatch("box tensor needs 4 channels");
  std::vector<BoundingBox> out(x.n);
  for (std::size_t i = 0; i < x.n; ++i) out[i] = {x(i, 0), x(i, 1), x(i, 2), x(i, 3)};
  return out;
}

Tensor smooth_sequence(const Tensor& x, int window) {
  const auto r = static_cast<std::ptrdiff_t>(window / 2);
  const auto n = static_cast<std::ptrdiff_t>(x.n);
  const double inv = 1.0 / static_cast<double>(2 * r + 1);
  Tensor y(x.n, x.c);
  for (std::ptrdiff_t t = 0; t < n; ++t)
    for (std::ptrdiff_t d = -r; d <= r; ++d) {
      const auto s = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(t + d, 0, n - 1));
      for (std::size_t j = 0; j < x.c; ++j) y(static_cast<std::size_t>(t), j) += x(s, j);
    }
  for (double& v : y.data) v *= inv;
  return y;
}

Tensor smooth_adjoint(const Tensor& dy, int window) {
  const auto r = static_cast<std::ptrdiff_t>(window / 2);
  const auto n = static_cast<std::ptrdiff_t>(dy.n);
  const double inv = 1.0 / static_cast<double>(2 * r + 1);
  Tensor dx(dy.n, dy.c);
  for (std::ptrdiff_t t = 0; t < n; ++t)
    for (std::ptrdiff_t d = -r; d <= r; ++d) {
      const auto s = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(t + d, 0, n - 1));
      for (std::size_t j = 0; j < dy.c; ++j) dx(s, j) += dy(static_cast<std::size_t>(t), j) * inv;
    }
  return dx;
}

BoxSequence smooth_sequence(const BoxSequence& x, double window_s) {
  if (!(window_s > 0.0)) throw ConfigError("smoothing window must be > 0");
  return {x.fps, from_tensor(smooth_sequence(to_tensor(x.boxes), odd_window(window_s, x.fps)))};
}

Tensor mix(const Tensor& raw, const Tensor& smooth, const Tensor& gate) {
  if (!raw.same_shape(smooth) || !raw.same_shape(gate)) throw ShapeMismatch("mix: shapes differ");
  Tensor y(raw.n, raw.c);
  for (std::size_t i = 0; i < y.data.size(); ++i)
    y.data[i] = raw.data[i] * (1.0 - gate.data[i]) + smooth.data[i] * gate.data[i];
  return y;
}

Normalization Normalization::of(const Tensor& x) {
  Normalization n;
  if (x.n == 0) return n;
  double diag = 0.0;
  for (std::size_t i = 0; i < x.n; ++i) {
    for (std::size_t j = 0; j < 4; ++j) n.mean[j] += x(i, j);
    diag += std::hypot(x(i, 2), x(i, 3));
  }
  for (double& m : n.mean) m /= static_cast<double>(x.n);
  n.scale = std::max(1.0, diag / static_cast<double>(x.n));
  return n;
}

Tensor Normalization::apply(const Tensor& x) const {
  Tensor z = x;
  for (std::size_t i = 0; i < z.n; ++i)
    for (std::size_t j = 0; j < 4; ++j) z(i, j) = (z(i, j) - mean[j]) / scale;
  return z;
}

Tensor Normalization::invert(const Tensor& z) const {
  Tensor x = z;
  for (std::size_t i = 0; i < x.n; ++i)
    for (std::size_t j = 0; j < 4; ++j) x(i, j) = x(i, j) * scale + mean[j];
  return x;
}

RefinerModel::RefinerModel(const RefinerConfig& config, int fps, std::uint64_t seed)
    : config_(config), fps_(fps), store_(seed) {
  if (config.hidden < 1 || config.iterations < 0 || !(config.window_s > 0.0) || !(config.kernel_s > 0.0) || fps < 1)
    throw ConfigError("invalid refiner config");
  const auto k = static_cast<std::size_t>(kernel());
  const auto h = static_cast<std::size_t>(config.hidden);
  store_.add("conv.w", {k, 4, h}, k * 4, k * h);
  store_.add_zeros("conv.b", {h});
  store_.add("fc1.w", {h, h}, h, h);
  store_.add_zeros("fc1.b", {h});
  store_.add("fc2.w", {h, 4}, h, 4);
  store_.add_zeros("fc2.b", {4});
}

namespace {

struct GateCache {
  Tensor a0, h0, a1, h1, g;
};

GateCache gate_forward(const ParamStore& s, const Tensor& z, std::size_t k) {
  GateCache c;
  c.a0 = conv1d(z, s["conv.w"].value, s["conv.b"].value, k);
  c.h0 = relu(c.a0);
  c.a1 = dense(c.h0, s["fc1.w"].value, s["fc1.b"].value);
  c.h1 = relu(c.a1);
  c.g = sigmoid(dense(c.h1, s["fc2.w"].value, s["fc2.b"].value));
  return c;
}

// Returns d loss / d z through the gate network; accumulates into grads.
Tensor gate_backward(const ParamStore& s, ParamStore& grads, const Tensor& z, const GateCache& c, const Tensor& dg,
                     std::size_t k) {
  const Tensor da2 = sigmoid_backward(c.g, dg);
  const Tensor dh1 = dense_backward(c.h1, s["fc2.w"].value, da2, grads["fc2.w"].grad, grads["fc2.b"].grad);
  const Tensor da1 = relu_backward(c.a1, dh1);
  const Tensor dh0 = dense_backward(c.h0, s["fc1.w"].value, da1, grads["fc1.w"].grad, grads["fc1.b"].grad);
  const Tensor da0 = relu_backward(c.a0, dh0);
  return conv1d_backward(z, s["conv.w"].value, k, da0, grads["conv.w"].grad, grads["conv.b"].grad);
}

}  // namespace

Tensor RefinerModel::gate(const Tensor& z) const {
  if (forced_gate) return Tensor(z.n, 4, *forced_gate);
  return gate_forward(store_, z, static_cast<std::size_t>(kernel())).g;
}

nlohmann::json RefinerModel::to_json() const {
  return {{"kind", "refiner"},
          {"fps", fps_},
          {"config",
           {{"window_s", config_.window_s},
            {"kernel_s", config_.kernel_s},
            {"hidden", config_.hidden},
            {"iterations", config_.iterations}}},
          {"store", store_.to_json()}};
}

RefinerModel RefinerModel::from_json(const nlohmann::json& j) {
  try {
    if (j.at("kind").get<std::string>() != "refiner") throw ConfigError("checkpoint is not a refiner model");
    const auto& c = j.at("config");
    RefinerConfig cfg{c.at("window_s").get<double>(), c.at("kernel_s").get<double>(), c.at("hidden").get<int>(),
                      c.at("iterations").get<int>()};
    RefinerModel m(cfg, j.at("fps").get<int>(), j.at("store").at("seed").get<std::uint64_t>());
    m.store_.load_json(j.at("store"));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed refiner checkpoint: ") + e.what());
  }
}

Tensor outlier_filter_once(const Tensor& z, const RefinerModel& model) {
  return mix(z, smooth_sequence(z, model.window()), model.gate(z));
}

BoxSequence refine(const BoxSequence& x, const RefinerModel& model) {
  if (x.boxes.empty()) return x;
  const Tensor raw = to_tensor(x.boxes);
  const Normalization norm = Normalization::of(raw);
  Tensor z = norm.apply(raw);
  for (int i = 0; i < model.config().iterations; ++i) z = outlier_filter_once(z, model);
  BoxSequence out{x.fps, from_tensor(norm.invert(z))};
  for (auto& b : out.boxes) {
    b.w = std::max(b.w, 1.0);
    b.h = std::max(b.h, 1.0);
  }
  return out;
}

std::vector<std::optional<BoundingBox>> refine_track(const std::vector<std::optional<BoundingBox>>& boxes,
                                                     const RefinerModel& model) {
  std::vector<std::optional<BoundingBox>> out(boxes.size());
  std::size_t i = 0;
  while (i < boxes.size()) {
    if (!boxes[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    BoxSequence run{model.fps(), {}};
    while (j < boxes.size() && boxes[j]) run.boxes.push_back(*boxes[j++]);
    const BoxSequence refined = refine(run, model);
    for (std::size_t k = 0; k < refined.size(); ++k) out[i + k] = refined.boxes[k];
    i = j;
  }
  return out;
}

double refiner_loss(const RefinerModel& model, const Tensor& input, const Tensor& target, std::span<const double> mask,
                    ParamStore* grads) {
  const Normalization norm = Normalization::of(input);
  const Tensor goal = norm.apply(target);
  const int window = model.window();
  const auto k = static_cast<std::size_t>(model.kernel());
  const int iterations = model.config().iterations;
  const ParamStore& s = model.store();

  std::vector<Tensor> zs{norm.apply(input)};
  std::vector<Tensor> smooths;
  std::vector<GateCache> caches;
  for (int it = 0; it < iterations; ++it) {
    const Tensor& z = zs.back();
    smooths.push_back(smooth_sequence(z, window));
    caches.push_back(gate_forward(s, z, k));
    zs.push_back(mix(z, smooths.back(), caches.back().g));
  }
  Tensor dz;
  const double loss = loss_l1(zs.back(), goal, mask, grads ? &dz : nullptr);
  if (!grads) return loss;
  for (int it = iterations - 1; it >= 0; --it) {
    const auto idx = static_cast<std::size_t>(it);
    const Tensor& z = zs[idx];
    const Tensor& sm = smooths[idx];
    const Tensor& g = caches[idx].g;
    Tensor dg(z.n, 4), d_raw(z.n, 4), d_smooth(z.n, 4);
    for (std::size_t e = 0; e < dz.data.size(); ++e) {
      dg.data[e] = dz.data[e] * (sm.data[e] - z.data[e]);
      d_raw.data[e] = dz.data[e] * (1.0 - g.data[e]);
      d_smooth.data[e] = dz.data[e] * g.data[e];
    }
    const Tensor via_gate = gate_backward(s, *grads, z, caches[idx], dg, k);
    const Tensor via_smooth = smooth_adjoint(d_smooth, window);
    for (std::size_t e = 0; e < dz.data.size(); ++e)
      dz.data[e] = d_raw.data[e] + via_smooth.data[e] + via_gate.data[e];
  }
  return loss;
}

RefinerSample corrupt_sequence(const BoxSequence& clean, const CorruptionSpec& spec, Rng& rng) {
  RefinerSample s;
  s.input = clean;
  s.target = clean.boxes;
  auto& boxes = s.input.boxes;
  const auto n = static_cast<int>(boxes.size());
  for (auto& b : boxes) {
    const double diag = std::hypot(b.w, b.h);
    b.cx += rng.normal(0.0, spec.jitter * diag);
    b.cy += rng.normal(0.0, spec.jitter * diag);
    b.w *= std::exp(rng.normal(0.0, spec.jitter));
    b.h *= std::exp(rng.normal(0.0, spec.jitter));
  }
  const double duration = static_cast<double>(n) / clean.fps;
  const double expected = spec.oversize_per_s * duration;
  int segments = static_cast<int>(expected);
  if (rng.bernoulli(expected - segments)) ++segments;
  for (int k = 0; k < segments && n > 0; ++k) {
    const int len = std::max(1, static_cast<int>(std::lround(rng.uniform(spec.oversize_s[0], spec.oversize_s[1]) *
                                                            clean.fps)));
    const int start = rng.uniform_int(0, std::max(0, n - 1));
    const double sw = rng.uniform(spec.oversize_scale[0], spec.oversize_scale[1]);
    const double sh = rng.uniform(spec.oversize_scale[0], spec.oversize_scale[1]);
    const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
    for (int i = start; i < std::min(n, start + len); ++i) {
      auto& b = boxes[static_cast<std::size_t>(i)];
      b.cx += side * 0.5 * (sw - 1.0) * b.w;
      b.cy -= 0.5 * (sh - 1.0) * b.h;
      b.w *= sw;
      b.h *= sh;
    }
  }
  for (auto& b : boxes) {
    if (!rng.bernoulli(spec.spike_prob)) continue;
    const double f = rng.uniform(spec.spike_scale[0], spec.spike_scale[1]);
    switch (rng.uniform_int(0, 2)) {
      case 0: b.w *= f; break;
      case 1: b.h *= f; break;
      default:
        b.w *= f;
        b.h *= f;
    }
  }
  return s;
}

namespace {

struct Window {
  Tensor input, target;
  std::vector<double> mask;
};

Window crop(const RefinerSample& s, std::size_t start, std::size_t len) {
  Window w;
  const std::size_t end = std::min(s.input.size(), start + len);
  const std::span<const BoundingBox> in(s.input.boxes);
  const std::span<const BoundingBox> tg(s.target);
  w.input = to_tensor(in.subspan(start, end - start));
  w.target = to_tensor(tg.subspan(start, end - start));
  if (!s.mask.empty()) w.mask.assign(s.mask.begin() + static_cast<std::ptrdiff_t>(start),
                                     s.mask.begin() + static_cast<std::ptrdiff_t>(end));
  return w;
}

double mean_loss(const RefinerModel& model, std::span<const RefinerSample> samples) {
  double total = 0.0;
  for (const auto& s : samples) {
    const Window w = crop(s, 0, s.input.size());
    total += refiner_loss(model, w.input, w.target, w.mask, nullptr);
  }
  return total / static_cast<double>(samples.size());
}

}  // namespace

RefinerModel train_refiner(std::span<const RefinerSample> samples, const TrainOptions& options,
                           const RefinerConfig& config, int fps, TrainLog* log) {
  if (samples.empty()) throw ConfigError("train_refiner needs at least one sample");
  for (const auto& s : samples)
    if (s.input.size() != s.target.size() || s.input.boxes.empty() ||
        (!s.mask.empty() && s.mask.size() != s.input.size()))
      throw ShapeMismatch("refiner sample: input, target and mask lengths differ");
  RefinerModel model(config, fps, options.seed);
  Rng rng(derive_seed(options.seed, 1));
  AdamConfig adam{.lr = options.lr,
                  .schedule = Schedule::Cosine,
                  .total_steps = static_cast<std::int64_t>(options.epochs) * static_cast<std::int64_t>(samples.size())};
  if (log) log->epoch_loss = {mean_loss(model, samples)};
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
    for (std::size_t idx : order) {
      const RefinerSample& s = samples[idx];
      const std::size_t n = s.input.size();
      const std::size_t len = options.crop > 0 ? std::min(n, static_cast<std::size_t>(options.crop)) : n;
      const std::size_t start = n > len ? static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(n - len))) : 0;
      const Window w = crop(s, start, len);
      model.store().zero_grad();
      const double loss = refiner_loss(model, w.input, w.target, w.mask, &model.store());
      if (!std::isfinite(loss)) throw Diverged("refiner training loss is not finite");
      adam_step(model.store(), adam);
    }
    if (log) {
      log->epoch_loss.push_back(mean_loss(model, samples));
      if (!std::isfinite(log->epoch_loss.back())) throw Diverged("refiner training loss is not finite");
    }
  }
  return model;
}

}  // namespace geobox
