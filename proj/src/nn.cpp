#include "sfl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sfl/random.hpp"

namespace sfl {
namespace {

// Eight independent partial sums so the compiler can keep them in vector
// lanes without reassociating; the summation order is fixed, so results
// are reproducible.
float dot(const float* a, const float* b, std::size_t n) {
  float acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  float tail = 0.0f;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) +
         ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail;
}

float sum(const float* a, std::size_t n) {
  float acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l];
  float tail = 0.0f;
  for (; i < n; ++i) tail += a[i];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) +
         ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail;
}

// y += alpha * x
void axpy(float alpha, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

[[noreturn]] void dimension_error(const Layer& layer, const Shape& input,
                                  const std::string& detail) {
  throw DimensionError(std::string(to_string(layer.kind)) + " layer: " +
                       detail + " (input shape " + shape_to_string(input) +
                       ")");
}

struct ConvGeometry {
  std::size_t in_ch, out_ch, kh, kw, h, w, oh, ow;
  std::size_t patch() const { return in_ch * kh * kw; }
  std::size_t positions() const { return oh * ow; }
};

ConvGeometry conv_geometry(const Layer& layer, const Shape& input) {
  ConvGeometry g{layer.dims[0], layer.dims[1], layer.dims[2], layer.dims[3],
                 0, 0, 0, 0};
  if (input.size() != 3 || input[0] != g.in_ch)
    dimension_error(layer, input,
                    "expected [" + std::to_string(g.in_ch) + ", H, W]");
  g.h = input[1];
  g.w = input[2];
  if (g.h < g.kh || g.w < g.kw)
    dimension_error(layer, input, "input smaller than the kernel");
  g.oh = g.h - g.kh + 1;
  g.ow = g.w - g.kw + 1;
  return g;
}

// Unfolds the input into a [patch, positions] matrix; row r corresponds to
// weight column (ic, ky, kx) in the flattened [out_ch, patch] kernel.
std::vector<float> im2col(const ConvGeometry& g, const float* in) {
  std::vector<float> cols(g.patch() * g.positions());
  float* dst = cols.data();
  for (std::size_t ic = 0; ic < g.in_ch; ++ic)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx)
        for (std::size_t y = 0; y < g.oh; ++y) {
          const float* src = in + (ic * g.h + y + ky) * g.w + kx;
          dst = std::copy(src, src + g.ow, dst);
        }
  return cols;
}

void col2im_add(const ConvGeometry& g, const float* cols, float* in) {
  for (std::size_t ic = 0; ic < g.in_ch; ++ic)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx)
        for (std::size_t y = 0; y < g.oh; ++y) {
          float* dst = in + (ic * g.h + y + ky) * g.w + kx;
          for (std::size_t x = 0; x < g.ow; ++x) dst[x] += cols[x];
          cols += g.ow;
        }
}

void expect_same_shape(const Layer& layer, const Tensor& grad_out,
                       const Shape& expected) {
  if (grad_out.shape() != expected)
    throw DimensionError(std::string(to_string(layer.kind)) +
                         " backward: grad_out shape " +
                         shape_to_string(grad_out.shape()) +
                         " does not match forward output " +
                         shape_to_string(expected));
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::FullyConnected: return "FullyConnected";
    case LayerKind::Conv2D: return "Conv2D";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::Flatten: return "Flatten";
  }
  return "Unknown";
}

Layer Layer::fully_connected(std::size_t in, std::size_t out) {
  Layer l;
  l.kind = LayerKind::FullyConnected;
  l.dims = {in, out, 0, 0};
  l.weights = Tensor({out, in});
  l.bias = Tensor({out});
  return l;
}

Layer Layer::conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kh,
                    std::size_t kw) {
  Layer l;
  l.kind = LayerKind::Conv2D;
  l.dims = {in_ch, out_ch, kh, kw};
  l.weights = Tensor({out_ch, in_ch, kh, kw});
  l.bias = Tensor({out_ch});
  return l;
}

Layer Layer::relu() { return Layer{LayerKind::ReLU, {}, {}, {}}; }
Layer Layer::flatten() { return Layer{LayerKind::Flatten, {}, {}, {}}; }

std::size_t Layer::fan_in() const {
  switch (kind) {
    case LayerKind::FullyConnected: return dims[0];
    case LayerKind::Conv2D: return dims[0] * dims[2] * dims[3];
    default: return 0;
  }
}

Shape Layer::output_shape(const Shape& input) const {
  switch (kind) {
    case LayerKind::FullyConnected:
      if (input.size() != 1 || input[0] != dims[0])
        dimension_error(*this, input,
                        "expected [" + std::to_string(dims[0]) + "]");
      return {dims[1]};
    case LayerKind::Conv2D: {
      auto g = conv_geometry(*this, input);
      return {g.out_ch, g.oh, g.ow};
    }
    case LayerKind::ReLU:
      return input;
    case LayerKind::Flatten:
      return {element_count(input)};
  }
  dimension_error(*this, input, "unknown layer kind");
}

LayerOutput forward(const Layer& layer, const Tensor& input) {
  Shape out_shape = layer.output_shape(input.shape());
  Tensor out(out_shape);
  const float* x = input.data();
  float* y = out.data();

  switch (layer.kind) {
    case LayerKind::FullyConnected: {
      const std::size_t in = layer.dims[0], n_out = layer.dims[1];
      const float* w = layer.weights.data();
      for (std::size_t o = 0; o < n_out; ++o)
        y[o] = dot(w + o * in, x, in) + layer.bias[o];
      break;
    }
    case LayerKind::Conv2D: {
      auto g = conv_geometry(layer, input.shape());
      auto cols = im2col(g, x);
      const float* w = layer.weights.data();
      const std::size_t n = g.positions();
      for (std::size_t oc = 0; oc < g.out_ch; ++oc) {
        float* row = y + oc * n;
        std::fill(row, row + n, layer.bias[oc]);
        for (std::size_t k = 0; k < g.patch(); ++k)
          axpy(w[oc * g.patch() + k], cols.data() + k * n, row, n);
      }
      break;
    }
    case LayerKind::ReLU:
      for (std::size_t i = 0; i < input.size(); ++i)
        y[i] = x[i] > 0.0f ? x[i] : 0.0f;
      break;
    case LayerKind::Flatten:
      std::copy(x, x + input.size(), y);
      break;
  }
  return {std::move(out), input};
}

namespace {

// Writes (or adds, when `add`) the parameter gradients of one layer into
// gw/gb and returns the input gradient.
Tensor backward_into(const Layer& layer, const Tensor& cache, const Tensor& grad_out,
                     float* gw, float* gb, bool add) {
  expect_same_shape(layer, grad_out, layer.output_shape(cache.shape()));
  Tensor grad_input(cache.shape());
  const float* x = cache.data();
  const float* g = grad_out.data();
  float* gx = grad_input.data();

  switch (layer.kind) {
    case LayerKind::FullyConnected: {
      const std::size_t in = layer.dims[0], n_out = layer.dims[1];
      const float* w = layer.weights.data();
      for (std::size_t o = 0; o < n_out; ++o) {
        const float go = g[o];
        float* row = gw + o * in;
        if (add) {
          for (std::size_t i = 0; i < in; ++i) row[i] += go * x[i];
          gb[o] += go;
        } else {
          for (std::size_t i = 0; i < in; ++i) row[i] = go * x[i];
          gb[o] = go;
        }
        axpy(go, w + o * in, gx, in);
      }
      break;
    }
    case LayerKind::Conv2D: {
      auto geo = conv_geometry(layer, cache.shape());
      auto cols = im2col(geo, x);
      const std::size_t n = geo.positions(), patch = geo.patch();
      const float* w = layer.weights.data();
      std::vector<float> grad_cols(patch * n, 0.0f);
      for (std::size_t oc = 0; oc < geo.out_ch; ++oc) {
        const float* grow = g + oc * n;
        const float db = sum(grow, n);
        gb[oc] = add ? gb[oc] + db : db;
        for (std::size_t k = 0; k < patch; ++k) {
          const float dw = dot(grow, cols.data() + k * n, n);
          float& slot = gw[oc * patch + k];
          slot = add ? slot + dw : dw;
          axpy(w[oc * patch + k], grow, grad_cols.data() + k * n, n);
        }
      }
      col2im_add(geo, grad_cols.data(), gx);
      break;
    }
    case LayerKind::ReLU:
      for (std::size_t i = 0; i < cache.size(); ++i)
        gx[i] = x[i] > 0.0f ? g[i] : 0.0f;
      break;
    case LayerKind::Flatten:
      std::copy(g, g + grad_out.size(), gx);
      break;
  }
  return grad_input;
}

}  // namespace

LayerGradients backward(const Layer& layer, const Tensor& cache,
                        const Tensor& grad_out) {
  LayerGradients grads;
  if (layer.has_parameters()) {
    grads.weights = Tensor(layer.weights.shape());
    grads.bias = Tensor(layer.bias.shape());
  }
  grads.input = backward_into(layer, cache, grad_out, grads.weights.data(),
                              grads.bias.data(), false);
  return grads;
}

LossResult softmax_cross_entropy(const Tensor& logits, std::size_t label) {
  if (logits.rank() != 1 || logits.empty())
    throw DimensionError("softmax_cross_entropy expects a non-empty vector, got " +
                         shape_to_string(logits.shape()));
  if (label >= logits.size())
    throw std::out_of_range("label " + std::to_string(label) +
                            " outside [0, " + std::to_string(logits.size()) +
                            ")");
  const float peak = *std::max_element(logits.values().begin(),
                                       logits.values().end());
  double denom = 0.0;
  for (float z : logits.values()) denom += std::exp(double(z) - peak);

  LossResult result{0.0f, Tensor(logits.shape())};
  for (std::size_t i = 0; i < logits.size(); ++i) {
    float p = static_cast<float>(std::exp(double(logits[i]) - peak) / denom);
    result.grad_logits[i] = p - (i == label ? 1.0f : 0.0f);
  }
  result.loss =
      static_cast<float>(std::log(denom) - (double(logits[label]) - peak));
  return result;
}

std::size_t argmax(const Tensor& values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

std::vector<Tensor*> parameters(std::span<Layer> layers) {
  std::vector<Tensor*> out;
  for (auto& l : layers)
    if (l.has_parameters()) {
      out.push_back(&l.weights);
      out.push_back(&l.bias);
    }
  return out;
}

std::vector<const Tensor*> parameters(std::span<const Layer> layers) {
  std::vector<const Tensor*> out;
  for (const auto& l : layers)
    if (l.has_parameters()) {
      out.push_back(&l.weights);
      out.push_back(&l.bias);
    }
  return out;
}

ForwardTrace forward_all(std::span<const Layer> layers, const Tensor& input) {
  ForwardTrace trace;
  trace.caches.reserve(layers.size());
  Tensor current = input;
  for (const auto& layer : layers) {
    auto [out, cache] = forward(layer, current);
    trace.caches.push_back(std::move(cache));
    current = std::move(out);
  }
  trace.output = std::move(current);
  return trace;
}

Tensor infer(std::span<const Layer> layers, const Tensor& input) {
  Tensor current = input;
  for (const auto& layer : layers) current = forward(layer, current).output;
  return current;
}

Shape output_shape(std::span<const Layer> layers, const Shape& input) {
  Shape s = input;
  for (const auto& layer : layers) s = layer.output_shape(s);
  return s;
}

StackGradients backward_all(std::span<const Layer> layers,
                            const ForwardTrace& trace, const Tensor& grad_out) {
  StackGradients result;
  for (const Tensor* p : parameters(layers)) result.params.emplace_back(p->shape());
  result.input = backward_accumulate(layers, trace, grad_out, result.params,
                                     GradientMode::Overwrite);
  return result;
}

Tensor backward_accumulate(std::span<const Layer> layers, const ForwardTrace& trace,
                           const Tensor& grad_out, std::span<Tensor> grads,
                           GradientMode mode) {
  if (trace.caches.size() != layers.size())
    throw DimensionError("forward trace does not belong to this layer stack");
  const auto slots = parameters(layers);
  if (grads.size() != slots.size())
    throw DimensionError("expected " + std::to_string(slots.size()) +
                         " gradient buffers, got " + std::to_string(grads.size()));
  for (std::size_t i = 0; i < slots.size(); ++i)
    if (grads[i].shape() != slots[i]->shape())
      throw DimensionError("gradient buffer " + std::to_string(i) + " has shape " +
                           shape_to_string(grads[i].shape()) + ", expected " +
                           shape_to_string(slots[i]->shape()));
  std::size_t slot = grads.size();
  Tensor grad = grad_out;
  for (std::size_t i = layers.size(); i-- > 0;) {
    float* gw = nullptr;
    float* gb = nullptr;
    if (layers[i].has_parameters()) {
      slot -= 2;
      gw = grads[slot].data();
      gb = grads[slot + 1].data();
    }
    grad = backward_into(layers[i], trace.caches[i], grad, gw, gb,
                         mode == GradientMode::Add);
  }
  return grad;
}

void initialize_uniform(std::span<Layer> layers, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& layer : layers) {
    if (!layer.has_parameters()) continue;
    const float limit = std::sqrt(6.0f / static_cast<float>(layer.fan_in()));
    for (float& w : layer.weights.values()) w = rng.uniform(-limit, limit);
    layer.bias.fill(0.0f);
  }
}

SgdState SgdState::zeros_like(std::span<const Tensor* const> params,
                              float learning_rate, float momentum) {
  if (!(learning_rate > 0.0f))
    throw std::invalid_argument("learning rate must be positive");
  if (momentum < 0.0f || momentum >= 1.0f)
    throw std::invalid_argument("momentum must lie in [0, 1)");
  SgdState state{learning_rate, momentum, {}};
  state.velocity.reserve(params.size());
  for (const Tensor* p : params) state.velocity.emplace_back(p->shape());
  return state;
}

void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
              SgdState& state) {
  if (params.size() != grads.size() || params.size() != state.velocity.size())
    throw DimensionError("sgd_step: " + std::to_string(params.size()) +
                         " parameters, " + std::to_string(grads.size()) +
                         " gradients, " + std::to_string(state.velocity.size()) +
                         " velocity tensors");
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& w = *params[t];
    Tensor& v = state.velocity[t];
    const Tensor& g = grads[t];
    if (w.shape() != g.shape() || w.shape() != v.shape())
      throw DimensionError("sgd_step: parameter " + std::to_string(t) +
                           " shape " + shape_to_string(w.shape()) +
                           " vs gradient " + shape_to_string(g.shape()) +
                           " vs velocity " + shape_to_string(v.shape()));
    float* wp = w.data();
    float* vp = v.data();
    const float* gp = g.data();
    const float m = state.momentum, lr = state.learning_rate;
    for (std::size_t i = 0; i < w.size(); ++i) {
      vp[i] = m * vp[i] + gp[i];
      wp[i] -= lr * vp[i];
    }
  }
}

}  // namespace sfl
