#include "geobox/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "geobox/error.hpp"
#include "geobox/evaluation.hpp"

namespace geobox {

Tensor high_pass(const Tensor& x, int window) {
  Tensor y = x;
  const Tensor s = smooth_sequence(x, window);
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] -= s.data[i];
  return y;
}

Tensor high_pass(const BoxSequence& x, double window_s) {
  if (!(window_s > 0.0)) throw ConfigError("high-pass window must be > 0");
  return high_pass(to_tensor(x.boxes), odd_window(window_s, x.fps));
}

RankerModel::RankerModel(const RankerConfig& config, int fps, std::uint64_t seed)
    : config_(config), fps_(fps), store_(seed) {
  if (config.conv_channels < 1 || config.dense1 < 1 || config.dense2 < 1 || !(config.highpass_s > 0.0) || fps < 1)
    throw ConfigError("invalid ranker config");
  const auto c = static_cast<std::size_t>(config.conv_channels);
  const auto d1 = static_cast<std::size_t>(config.dense1);
  const auto d2 = static_cast<std::size_t>(config.dense2);
  const std::size_t k1 = kernel(0), k2 = kernel(1), k3 = kernel(2);
  store_.add("conv1.w", {k1, 4, c}, k1 * 4, k1 * c);
  store_.add_zeros("conv1.b", {c});
  store_.add("conv2.w", {k2, c, c}, k2 * c, k2 * c);
  store_.add_zeros("conv2.b", {c});
  store_.add("conv3.w", {k3, 2 * c, c}, k3 * 2 * c, k3 * c);
  store_.add_zeros("conv3.b", {c});
  store_.add("fc1.w", {c, d1}, c, d1);
  store_.add_zeros("fc1.b", {d1});
  store_.add("fc2.w", {d1, d2}, d1, d2);
  store_.add_zeros("fc2.b", {d2});
  store_.add("fc3.w", {d2, 1}, d2, 1);
  store_.add_zeros("fc3.b", {1});
}

std::size_t RankerModel::kernel(int layer) const {
  return static_cast<std::size_t>(odd_window(config_.kernel_s[static_cast<std::size_t>(layer)], fps_));
}

Tensor RankerModel::raw_features(const BoxSequence& x) const {
  const int window = odd_window(config_.highpass_s, x.fps);
  const Tensor boxes = to_tensor(x.boxes);
  Tensor f = high_pass(boxes, window);
  Tensor diag(boxes.n, 1);
  for (std::size_t i = 0; i < boxes.n; ++i) diag(i, 0) = std::hypot(boxes(i, 2), boxes(i, 3));
  const Tensor scale = smooth_sequence(diag, window);
  for (std::size_t i = 0; i < f.n; ++i)
    for (std::size_t j = 0; j < 4; ++j) f(i, j) /= std::max(scale(i, 0), 1.0);
  return f;
}

Tensor RankerModel::features(const BoxSequence& x) const {
  Tensor f = raw_features(x);
  for (std::size_t i = 0; i < f.n; ++i)
    for (std::size_t j = 0; j < 4; ++j) f(i, j) = (f(i, j) - feature_mean[j]) / feature_std[j];
  return f;
}

nlohmann::json RankerModel::to_json() const {
  return {{"kind", "ranker"},
          {"fps", fps_},
          {"config",
           {{"highpass_s", config_.highpass_s},
            {"kernel_s", config_.kernel_s},
            {"conv_channels", config_.conv_channels},
            {"dense1", config_.dense1},
            {"dense2", config_.dense2}}},
          {"feature_mean", feature_mean},
          {"feature_std", feature_std},
          {"store", store_.to_json()}};
}

RankerModel RankerModel::from_json(const nlohmann::json& j) {
  try {
    if (j.at("kind").get<std::string>() != "ranker") throw ConfigError("checkpoint is not a ranker model");
    const auto& c = j.at("config");
    RankerConfig cfg;
    cfg.highpass_s = c.at("highpass_s").get<double>();
    cfg.kernel_s = c.at("kernel_s").get<std::array<double, 3>>();
    cfg.conv_channels = c.at("conv_channels").get<int>();
    cfg.dense1 = c.at("dense1").get<int>();
    cfg.dense2 = c.at("dense2").get<int>();
    RankerModel m(cfg, j.at("fps").get<int>(), j.at("store").at("seed").get<std::uint64_t>());
    m.feature_mean = j.at("feature_mean").get<std::array<double, 4>>();
    m.feature_std = j.at("feature_std").get<std::array<double, 4>>();
    m.store_.load_json(j.at("store"));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed ranker checkpoint: ") + e.what());
  }
}

namespace {

struct Forward {
  Tensor a1, h1, a2, h2, cat, a3, h3, b1, g1, b2, g2, y;
};

Forward forward(const RankerModel& m, const Tensor& x) {
  const ParamStore& s = m.store();
  Forward f;
  f.a1 = conv1d(x, s["conv1.w"].value, s["conv1.b"].value, m.kernel(0));
  f.h1 = relu(f.a1);
  f.a2 = conv1d(f.h1, s["conv2.w"].value, s["conv2.b"].value, m.kernel(1));
  f.h2 = relu(f.a2);
  f.cat = concat_channels(f.h2, f.h1);
  f.a3 = conv1d(f.cat, s["conv3.w"].value, s["conv3.b"].value, m.kernel(2));
  f.h3 = relu(f.a3);
  f.b1 = dense(f.h3, s["fc1.w"].value, s["fc1.b"].value);
  f.g1 = relu(f.b1);
  f.b2 = dense(f.g1, s["fc2.w"].value, s["fc2.b"].value);
  f.g2 = relu(f.b2);
  f.y = sigmoid(dense(f.g2, s["fc3.w"].value, s["fc3.b"].value));
  return f;
}

void backward(const RankerModel& m, const Tensor& x, const Forward& f, const Tensor& dy, ParamStore& g) {
  const ParamStore& s = m.store();
  Tensor d = sigmoid_backward(f.y, dy);
  d = dense_backward(f.g2, s["fc3.w"].value, d, g["fc3.w"].grad, g["fc3.b"].grad);
  d = relu_backward(f.b2, d);
  d = dense_backward(f.g1, s["fc2.w"].value, d, g["fc2.w"].grad, g["fc2.b"].grad);
  d = relu_backward(f.b1, d);
  d = dense_backward(f.h3, s["fc1.w"].value, d, g["fc1.w"].grad, g["fc1.b"].grad);
  d = relu_backward(f.a3, d);
  const Tensor dcat = conv1d_backward(f.cat, s["conv3.w"].value, m.kernel(2), d, g["conv3.w"].grad, g["conv3.b"].grad);
  const std::size_t c = f.h2.c;
  Tensor dh2(f.h2.n, c), dh1(f.h1.n, f.h1.c);
  for (std::size_t i = 0; i < dcat.n; ++i)
    for (std::size_t j = 0; j < dcat.c; ++j) (j < c ? dh2(i, j) : dh1(i, j - c)) = dcat(i, j);
  d = relu_backward(f.a2, dh2);
  const Tensor via_conv2 = conv1d_backward(f.h1, s["conv2.w"].value, m.kernel(1), d, g["conv2.w"].grad,
                                           g["conv2.b"].grad);
  for (std::size_t e = 0; e < dh1.data.size(); ++e) dh1.data[e] += via_conv2.data[e];
  d = relu_backward(f.a1, dh1);
  conv1d_backward(x, s["conv1.w"].value, m.kernel(0), d, g["conv1.w"].grad, g["conv1.b"].grad);
}

}  // namespace

std::vector<double> score_quality(const BoxSequence& x, const RankerModel& model) {
  if (x.boxes.empty()) return {};
  return forward(model, model.features(x)).y.data;
}

std::vector<std::optional<double>> score_track(const std::vector<std::optional<BoundingBox>>& boxes,
                                               const RankerModel& model) {
  std::vector<std::optional<double>> out(boxes.size());
  std::size_t i = 0;
  while (i < boxes.size()) {
    if (!boxes[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    BoxSequence run{model.fps(), {}};
    while (j < boxes.size() && boxes[j]) run.boxes.push_back(*boxes[j++]);
    const auto scores = score_quality(run, model);
    for (std::size_t k = 0; k < scores.size(); ++k) out[i + k] = scores[k];
    i = j;
  }
  return out;
}

double ranker_loss(const RankerModel& model, const Tensor& features, std::span<const double> labels,
                   std::span<const double> mask, ParamStore* grads) {
  if (labels.size() != features.n) throw ShapeMismatch("ranker_loss: label count");
  const Forward f = forward(model, features);
  Tensor target(features.n, 1);
  std::copy(labels.begin(), labels.end(), target.data.begin());
  Tensor dy;
  const double loss = loss_l2(f.y, target, mask, grads ? &dy : nullptr);
  if (grads) backward(model, features, f, dy, *grads);
  return loss;
}

RankerModel train_ranker(std::span<const RankerSample> samples, const TrainOptions& options,
                         const RankerConfig& config, int fps, TrainLog* log) {
  if (samples.empty()) throw ConfigError("train_ranker needs at least one sample");
  RankerModel model(config, fps, options.seed);
  std::vector<Tensor> feats;
  std::array<double, 4> sum{}, sq{};
  double count = 0.0;
  for (const auto& s : samples) {
    if (s.label.size() != s.boxes.size() || s.boxes.boxes.empty() ||
        (!s.mask.empty() && s.mask.size() != s.boxes.size()))
      throw ShapeMismatch("ranker sample: boxes, labels and mask lengths differ");
    for (double l : s.label)
      if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("ranker labels must lie in [0, 1]");
    feats.push_back(model.raw_features(s.boxes));
    const Tensor& f = feats.back();
    for (std::size_t i = 0; i < f.n; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        sum[j] += f(i, j);
        sq[j] += f(i, j) * f(i, j);
      }
    count += static_cast<double>(f.n);
  }
  for (std::size_t j = 0; j < 4; ++j) {
    model.feature_mean[j] = sum[j] / count;
    model.feature_std[j] = std::max(1e-6, std::sqrt(std::max(0.0, sq[j] / count - model.feature_mean[j] * model.feature_mean[j])));
  }
  for (auto& f : feats)
    for (std::size_t i = 0; i < f.n; ++i)
      for (std::size_t j = 0; j < 4; ++j) f(i, j) = (f(i, j) - model.feature_mean[j]) / model.feature_std[j];

  auto mean_loss = [&] {
    double total = 0.0;
    for (std::size_t k = 0; k < samples.size(); ++k)
      total += ranker_loss(model, feats[k], samples[k].label, samples[k].mask, nullptr);
    return total / static_cast<double>(samples.size());
  };
  if (log) log->epoch_loss = {mean_loss()};

  Rng rng(derive_seed(options.seed, 2));
  AdamConfig adam{.lr = options.lr,
                  .schedule = Schedule::Cosine,
                  .total_steps = static_cast<std::int64_t>(options.epochs) * static_cast<std::int64_t>(samples.size())};
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
    for (std::size_t idx : order) {
      const Tensor& f = feats[idx];
      const RankerSample& s = samples[idx];
      const std::size_t n = f.n;
      const std::size_t len = options.crop > 0 ? std::min(n, static_cast<std::size_t>(options.crop)) : n;
      const std::size_t start = n > len ? static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(n - len))) : 0;
      Tensor window(len, 4);
      std::copy_n(f.data.begin() + static_cast<std::ptrdiff_t>(start * 4), len * 4, window.data.begin());
      const std::span<const double> labels = std::span(s.label).subspan(start, len);
      const std::span<const double> mask = s.mask.empty() ? std::span<const double>{} : std::span(s.mask).subspan(start, len);
      model.store().zero_grad();
      const double loss = ranker_loss(model, window, labels, mask, &model.store());
      if (!std::isfinite(loss)) throw Diverged("ranker training loss is not finite");
      adam_step(model.store(), adam);
    }
    if (log) log->epoch_loss.push_back(mean_loss());
  }
  return model;
}

namespace {

bool ranks_before(const Annotation& a, const Annotation& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.clip != b.clip) return a.clip < b.clip;
  return a.frame < b.frame;
}

}  // namespace

std::vector<RankedAnnotation> rank(std::span<const Annotation> annotations, Policy policy) {
  std::vector<RankedAnnotation> out;
  out.reserve(annotations.size());
  for (const auto& a : annotations) out.push_back({a, 0, 0, 0.0});
  if (policy == Policy::Inter) {
    std::stable_sort(out.begin(), out.end(),
                     [](const RankedAnnotation& a, const RankedAnnotation& b) {
                       return ranks_before(a.annotation, b.annotation);
                     });
  } else {
    std::stable_sort(out.begin(), out.end(), [](const RankedAnnotation& a, const RankedAnnotation& b) {
      if (a.annotation.clip != b.annotation.clip) return a.annotation.clip < b.annotation.clip;
      return ranks_before(a.annotation, b.annotation);
    });
  }
  std::size_t begin = 0;
  while (begin < out.size()) {
    std::size_t end = out.size();
    if (policy == Policy::Intra) {
      end = begin;
      while (end < out.size() && out[end].annotation.clip == out[begin].annotation.clip) ++end;
    }
    const auto pool = static_cast<int>(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      out[i].position = static_cast<int>(i - begin) + 1;
      out[i].pool_size = pool;
      out[i].percentile = 100.0 * out[i].position / pool;
    }
    begin = end;
  }
  return out;
}

std::vector<RankedAnnotation> keep_top(std::span<const RankedAnnotation> ranked, double percent) {
  std::vector<RankedAnnotation> out;
  for (const auto& r : ranked) {
    const auto keep = static_cast<int>(std::ceil(percent / 100.0 * r.pool_size - 1e-9));
    if (r.position <= keep) out.push_back(r);
  }
  return out;
}

std::vector<PurificationRow> purification_curve(std::span<const ScoredBox> boxes, Policy policy,
                                                std::span<const double> fractions) {
  std::vector<Annotation> annotations;
  std::map<std::pair<std::string, int>, const ScoredBox*> lookup;
  for (const auto& b : boxes) {
    annotations.push_back(b.annotation);
    lookup[{b.annotation.clip, b.annotation.frame}] = &b;
  }
  const auto ranked = rank(annotations, policy);
  std::vector<PurificationRow> rows;
  for (double fraction : fractions) {
    const auto kept = keep_top(ranked, fraction * 100.0);
    PurificationRow row;
    row.fraction = fraction;
    row.kept = kept.size();
    std::vector<double> nds;
    std::size_t hits = 0;
    for (const auto& r : kept) {
      const ScoredBox& b = *lookup.at({r.annotation.clip, r.annotation.frame});
      if (b.iou > 0.5) ++hits;
      nds.push_back(b.nd);
    }
    if (!kept.empty()) {
      row.precision = static_cast<double>(hits) / static_cast<double>(kept.size());
      row.median_nd = median(nds);
    }
    rows.push_back(row);
  }
  return rows;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeMismatch("spearman: lengths differ");
  if (a.size() < 2) return 0.0;
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace geobox
