#pragma once

// Central finite differences against analytic layer gradients.

#include <cmath>
#include <functional>

#include "sfl/nn.hpp"
#include "sfl/random.hpp"

namespace sfl::testing {

inline constexpr float kStep = 1e-3f;

inline Tensor random_tensor(const Shape& shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(shape);
  for (float& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Scalar objective sum_j r_j * y_j evaluated in double.
inline double project(const Tensor& y, const Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += double(y[i]) * double(r[i]);
  return s;
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

// Largest relative error over every element of `x`, perturbing it in place.
inline double worst_error(Tensor& x, const Tensor& analytic,
                          const std::function<double()>& objective) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float keep = x[i];
    x[i] = keep + kStep;
    const double up = objective();
    x[i] = keep - kStep;
    const double down = objective();
    x[i] = keep;
    const double numeric = (up - down) / (2.0 * double(kStep));
    worst = std::max(worst, relative_error(analytic[i], numeric));
  }
  return worst;
}

struct LayerCheck {
  double input = 0.0, weights = 0.0, bias = 0.0;
  double max() const { return std::max({input, weights, bias}); }
};

// Checks d(r . forward(layer, x)) against backward(layer, x, r).
inline LayerCheck check_layer(Layer layer, Tensor x, Rng& rng) {
  const Tensor y = forward(layer, x).output;
  const Tensor r = random_tensor(y.shape(), rng);
  const LayerGradients g = backward(layer, x, r);
  auto objective = [&] { return project(forward(layer, x).output, r); };
  LayerCheck c;
  c.input = worst_error(x, g.input, objective);
  if (layer.has_parameters()) {
    c.weights = worst_error(layer.weights, g.weights, objective);
    c.bias = worst_error(layer.bias, g.bias, objective);
  }
  return c;
}

// Input away from the ReLU kink so the finite difference never straddles it.
inline Tensor kink_free(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (float& v : t.values()) {
    do v = rng.uniform(-1.0f, 1.0f);
    while (std::abs(v) < 10.0f * kStep);
  }
  return t;
}

inline double check_softmax(Tensor logits, std::size_t label) {
  const LossResult r = softmax_cross_entropy(logits, label);
  return worst_error(logits, r.grad_logits,
                     [&] { return double(softmax_cross_entropy(logits, label).loss); });
}

}  // namespace sfl::testing
