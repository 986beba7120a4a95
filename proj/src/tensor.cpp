#include "geobox/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "geobox/error.hpp"

namespace geobox {

namespace {

std::size_t volume(const std::vector<std::size_t>& shape) {
  std::size_t v = 1;
  for (auto d : shape) v *= d;
  return v;
}

Param make_param(const std::string& name, std::vector<std::size_t> shape) {
  Param p;
  p.name = name;
  p.shape = std::move(shape);
  const std::size_t n = volume(p.shape);
  p.value.assign(n, 0.0);
  p.grad.assign(n, 0.0);
  p.m.assign(n, 0.0);
  p.v.assign(n, 0.0);
  return p;
}

void require(bool ok, const char* what) {
  if (!ok) throw ShapeMismatch(what);
}

}  // namespace

Param& ParamStore::add(const std::string& name, std::vector<std::size_t> shape, std::size_t fan_in,
                       std::size_t fan_out) {
  Param p = make_param(name, std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : p.value) v = rng_.uniform(-limit, limit);
  params_.push_back(std::move(p));
  return params_.back();
}

Param& ParamStore::add_zeros(const std::string& name, std::vector<std::size_t> shape) {
  params_.push_back(make_param(name, std::move(shape)));
  return params_.back();
}

Param& ParamStore::operator[](const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw Error("no parameter named " + name);
}

const Param& ParamStore::operator[](const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw Error("no parameter named " + name);
}

void ParamStore::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

nlohmann::json ParamStore::to_json() const {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : params_) params.push_back({{"name", p.name}, {"shape", p.shape}, {"data", p.value}});
  return {{"seed", seed_}, {"step", step}, {"params", params}};
}

void ParamStore::load_json(const nlohmann::json& j) {
  try {
    step = j.at("step").get<std::int64_t>();
    for (const auto& item : j.at("params")) {
      Param& p = (*this)[item.at("name").get<std::string>()];
      auto shape = item.at("shape").get<std::vector<std::size_t>>();
      auto data = item.at("data").get<std::vector<double>>();
      if (shape != p.shape || data.size() != p.value.size())
        throw ConfigError("checkpoint shape mismatch for " + p.name);
      p.value = std::move(data);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
}

Tensor conv1d(const Tensor& x, std::span<const double> kernel, std::span<const double> bias, std::size_t k) {
  require(k % 2 == 1, "conv1d: kernel size must be odd");
  const std::size_t cin = x.c, cout = bias.size();
  require(kernel.size() == k * cin * cout, "conv1d: kernel shape");
  const auto r = static_cast<std::ptrdiff_t>(k / 2);
  const auto n = static_cast<std::ptrdiff_t>(x.n);
  Tensor y(x.n, cout);
  for (std::ptrdiff_t t = 0; t < n; ++t) {
    double* out = &y.data[static_cast<std::size_t>(t) * cout];
    std::copy(bias.begin(), bias.end(), out);
    for (std::ptrdiff_t d = -r; d <= r; ++d) {
      const std::ptrdiff_t s = t + d;
      if (s < 0 || s >= n) continue;
      const double* in = &x.data[static_cast<std::size_t>(s) * cin];
      const double* w = &kernel[static_cast<std::size_t>(d + r) * cin * cout];
      for (std::size_t i = 0; i < cin; ++i) {
        const double xi = in[i];
        if (xi == 0.0) continue;
        const double* wi = w + i * cout;
        for (std::size_t o = 0; o < cout; ++o) out[o] += xi * wi[o];
      }
    }
  }
  return y;
}

Tensor conv1d_backward(const Tensor& x, std::span<const double> kernel, std::size_t k, const Tensor& dy,
                       std::span<double> dkernel, std::span<double> dbias) {
  const std::size_t cin = x.c, cout = dy.c;
  require(dy.n == x.n && kernel.size() == k * cin * cout && dkernel.size() == kernel.size() &&
              dbias.size() == cout,
          "conv1d_backward: shapes");
  const auto r = static_cast<std::ptrdiff_t>(k / 2);
  const auto n = static_cast<std::ptrdiff_t>(x.n);
  Tensor dx(x.n, cin);
  for (std::ptrdiff_t t = 0; t < n; ++t) {
    const double* g = &dy.data[static_cast<std::size_t>(t) * cout];
    for (std::size_t o = 0; o < cout; ++o) dbias[o] += g[o];
    for (std::ptrdiff_t d = -r; d <= r; ++d) {
      const std::ptrdiff_t s = t + d;
      if (s < 0 || s >= n) continue;
      const double* in = &x.data[static_cast<std::size_t>(s) * cin];
      double* din = &dx.data[static_cast<std::size_t>(s) * cin];
      const std::size_t base = static_cast<std::size_t>(d + r) * cin * cout;
      for (std::size_t i = 0; i < cin; ++i) {
        const double* wi = &kernel[base + i * cout];
        double* dwi = &dkernel[base + i * cout];
        double acc = 0.0;
        for (std::size_t o = 0; o < cout; ++o) {
          dwi[o] += in[i] * g[o];
          acc += wi[o] * g[o];
        }
        din[i] += acc;
      }
    }
  }
  return dx;
}

Tensor dense(const Tensor& x, std::span<const double> weight, std::span<const double> bias) {
  return conv1d(x, weight, bias, 1);
}

Tensor dense_backward(const Tensor& x, std::span<const double> weight, const Tensor& dy, std::span<double> dweight,
                      std::span<double> dbias) {
  return conv1d_backward(x, weight, 1, dy, dweight, dbias);
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data) v = std::max(v, 0.0);
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  require(x.same_shape(dy), "relu_backward: shapes");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.data.size(); ++i)
    if (x.data[i] <= 0.0) dx.data[i] = 0.0;
  return dx;
}

Tensor sigmoid(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  return y;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& dy) {
  require(y.same_shape(dy), "sigmoid_backward: shapes");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] *= y.data[i] * (1.0 - y.data[i]);
  return dx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.n == b.n, "concat_channels: row counts differ");
  Tensor y(a.n, a.c + b.c);
  for (std::size_t i = 0; i < a.n; ++i) {
    std::copy_n(&a.data[i * a.c], a.c, &y.data[i * y.c]);
    std::copy_n(&b.data[i * b.c], b.c, &y.data[i * y.c + a.c]);
  }
  return y;
}

namespace {

template <typename Elem, typename Deriv>
double masked_loss(const Tensor& pred, const Tensor& target, std::span<const double> mask, Tensor* grad, Elem elem,
                   Deriv deriv) {
  require(pred.same_shape(target), "loss: shapes differ");
  require(mask.empty() || mask.size() == pred.n, "loss: mask length");
  double count = 0.0;
  for (std::size_t i = 0; i < pred.n; ++i)
    if (mask.empty() || mask[i] != 0.0) count += static_cast<double>(pred.c);
  if (grad) *grad = Tensor(pred.n, pred.c);
  if (count == 0.0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < pred.n; ++i) {
    if (!mask.empty() && mask[i] == 0.0) continue;
    for (std::size_t j = 0; j < pred.c; ++j) {
      const double d = pred(i, j) - target(i, j);
      total += elem(d);
      if (grad) (*grad)(i, j) = deriv(d) / count;
    }
  }
  return total / count;
}

}  // namespace

double loss_l1(const Tensor& pred, const Tensor& target, std::span<const double> mask, Tensor* grad) {
  return masked_loss(
      pred, target, mask, grad, [](double d) { return std::abs(d); },
      [](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); });
}

double loss_l2(const Tensor& pred, const Tensor& target, std::span<const double> mask, Tensor* grad) {
  return masked_loss(
      pred, target, mask, grad, [](double d) { return d * d; }, [](double d) { return 2.0 * d; });
}

void adam_step(ParamStore& store, const AdamConfig& cfg) {
  ++store.step;
  const auto t = static_cast<double>(store.step);
  double lr = cfg.lr;
  if (cfg.schedule == Schedule::Cosine && cfg.total_steps > 0) {
    const double progress = std::min(1.0, (t - 1.0) / static_cast<double>(cfg.total_steps));
    lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& p : store.params()) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
      p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
      p.value[i] -= lr * (p.m[i] / c1) / (std::sqrt(p.v[i] / c2) + cfg.eps);
    }
  }
}

}  // namespace geobox
