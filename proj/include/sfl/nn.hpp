#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "sfl/tensor.hpp"

namespace sfl {

enum class LayerKind : std::uint8_t {
  FullyConnected = 1,
  Conv2D = 2,
  ReLU = 3,
  Flatten = 4,
};

std::string_view to_string(LayerKind kind);

/// One network layer. Batch size is always 1, so inputs carry no batch axis:
/// FullyConnected takes [in], Conv2D takes [in_ch, H, W] (valid padding,
/// stride 1), ReLU and Flatten accept any shape.
struct Layer {
  LayerKind kind = LayerKind::ReLU;
  // FullyConnected: {in, out, 0, 0}; Conv2D: {in_ch, out_ch, kh, kw}.
  std::array<std::size_t, 4> dims{};
  Tensor weights;  // FC [out, in]; Conv2D [out_ch, in_ch, kh, kw]
  Tensor bias;     // [out] / [out_ch]

  static Layer fully_connected(std::size_t in, std::size_t out);
  static Layer conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kh,
                      std::size_t kw);
  static Layer relu();
  static Layer flatten();

  bool has_parameters() const {
    return kind == LayerKind::FullyConnected || kind == LayerKind::Conv2D;
  }
  /// Fan-in of one output unit (0 for parameterless layers).
  std::size_t fan_in() const;
  Shape output_shape(const Shape& input) const;

  friend bool operator==(const Layer&, const Layer&) = default;
};

struct LayerOutput {
  Tensor output;
  Tensor cache;  // the layer input, kept for backward
};

struct LayerGradients {
  Tensor input;
  Tensor weights;  // empty for parameterless layers
  Tensor bias;
};

LayerOutput forward(const Layer& layer, const Tensor& input);
LayerGradients backward(const Layer& layer, const Tensor& cache,
                        const Tensor& grad_out);

struct LossResult {
  float loss = 0.0f;
  Tensor grad_logits;
};

/// Cross-entropy of softmax(logits) against one label; grad = softmax - onehot.
LossResult softmax_cross_entropy(const Tensor& logits, std::size_t label);

/// Index of the largest value; ties resolve to the lowest index.
std::size_t argmax(const Tensor& values);

// ---------------------------------------------------------------------------
// Layer stacks

/// Weight and bias tensors of every parameterised layer, in layer order
/// (weights before bias). This is the canonical parameter order used by the
/// optimizer, the wire format and the file formats.
std::vector<Tensor*> parameters(std::span<Layer> layers);
std::vector<const Tensor*> parameters(std::span<const Layer> layers);

struct ForwardTrace {
  std::vector<Tensor> caches;
  Tensor output;
};

ForwardTrace forward_all(std::span<const Layer> layers, const Tensor& input);
Tensor infer(std::span<const Layer> layers, const Tensor& input);
Shape output_shape(std::span<const Layer> layers, const Shape& input);

struct StackGradients {
  Tensor input;
  std::vector<Tensor> params;  // aligned with parameters(layers)
};

StackGradients backward_all(std::span<const Layer> layers,
                            const ForwardTrace& trace, const Tensor& grad_out);

enum class GradientMode { Overwrite, Add };

/// Like backward_all but writes (Overwrite) or adds (Add) the parameter
/// gradients into caller-owned buffers aligned with parameters(layers).
/// Returns the gradient with respect to the input.
Tensor backward_accumulate(std::span<const Layer> layers, const ForwardTrace& trace,
                           const Tensor& grad_out, std::span<Tensor> grads,
                           GradientMode mode);

/// Uniform init in +-sqrt(6 / fan_in) for weights, zero bias. Draws come
/// from Rng(seed), layer by layer, weights in row-major order.
void initialize_uniform(std::span<Layer> layers, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Optimizer

struct SgdState {
  float learning_rate = 0.0f;
  float momentum = 0.0f;
  std::vector<Tensor> velocity;

  static SgdState zeros_like(std::span<const Tensor* const> params,
                             float learning_rate, float momentum);
};

/// Heavy-ball momentum: v <- momentum * v + g; w <- w - lr * v.
void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
              SgdState& state);

}  // namespace sfl
