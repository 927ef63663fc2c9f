#include "sfl/models.hpp"

#include <stdexcept>
#include <string>

namespace sfl {

std::string_view to_string(ModelName name) {
  switch (name) {
    case ModelName::Model1Mlp: return "model1_mlp";
    case ModelName::Model2Cnn: return "model2_cnn";
    case ModelName::Model3Cnn: return "model3_cnn";
  }
  return "unknown";
}

ModelName parse_model_name(std::string_view text) {
  for (auto name : {ModelName::Model1Mlp, ModelName::Model2Cnn,
                    ModelName::Model3Cnn})
    if (text == to_string(name)) return name;
  throw std::invalid_argument("unknown model '" + std::string(text) +
                              "' (expected model1_mlp, model2_cnn or model3_cnn)");
}

ModelFamily family_of(ModelName name) {
  return name == ModelName::Model1Mlp ? ModelFamily::Mlp : ModelFamily::Cnn;
}

Shape input_shape(ModelName name) {
  if (family_of(name) == ModelFamily::Mlp) return {kFeatureSize};
  return {1, kFeatureFrames, kFeatureCoefficients};
}

ModelSpec build(ModelName name) {
  ModelSpec spec;
  spec.name = name;
  spec.input_shape = input_shape(name);
  if (name == ModelName::Model1Mlp) {
    spec.layers = {Layer::fully_connected(kFeatureSize, 25), Layer::relu(),
                   Layer::fully_connected(25, kNumClasses)};
    spec.split_index = 2;
  } else {
    const std::size_t channels = name == ModelName::Model2Cnn ? 16 : 30;
    const std::size_t hidden = name == ModelName::Model2Cnn ? 128 : 256;
    // Two valid 3x3 convolutions shrink 50x13 to 46x9.
    const std::size_t flat = channels * (kFeatureFrames - 4) *
                             (kFeatureCoefficients - 4);
    spec.layers = {Layer::conv2d(1, 12, 3, 3),
                   Layer::relu(),
                   Layer::conv2d(12, channels, 3, 3),
                   Layer::relu(),
                   Layer::flatten(),
                   Layer::fully_connected(flat, hidden),
                   Layer::relu(),
                   Layer::fully_connected(hidden, kNumClasses)};
    spec.split_index = 2;
  }
  validate(spec);
  return spec;
}

ModelSpec build(ModelName name, std::uint64_t seed) {
  auto spec = build(name);
  initialize_uniform(spec.layers, seed);
  return spec;
}

void validate(const ModelSpec& spec) {
  if (spec.split_index < 1 || spec.split_index >= spec.layers.size())
    throw DimensionError("split index " + std::to_string(spec.split_index) +
                         " outside [1, " + std::to_string(spec.layers.size()) +
                         ")");
  for (const auto& l : spec.layers)
    if (l.has_parameters() &&
        (l.weights.shape() != (l.kind == LayerKind::FullyConnected
                                   ? Shape{l.dims[1], l.dims[0]}
                                   : Shape{l.dims[1], l.dims[0], l.dims[2],
                                           l.dims[3]}) ||
         l.bias.shape() != Shape{l.dims[1]}))
      throw DimensionError("parameter tensors do not match layer dims");
  auto out = output_shape(spec.layers, spec.input_shape);
  if (out != Shape{kNumClasses})
    throw DimensionError("model produces " + shape_to_string(out) +
                         " instead of [7] logits");
}

SplitModel split(const ModelSpec& spec) {
  validate(spec);
  auto cut = spec.layers.begin() + static_cast<std::ptrdiff_t>(spec.split_index);
  return {spec.name, {spec.layers.begin(), cut}, {cut, spec.layers.end()}};
}

Shape client_output_shape(const ModelSpec& spec) {
  return output_shape(
      std::span(spec.layers).first(spec.split_index), spec.input_shape);
}

std::size_t param_count(std::span<const Layer> layers, bool include_bias) {
  std::size_t n = 0;
  for (const auto& l : layers)
    if (l.has_parameters()) n += l.weights.size() + (include_bias ? l.bias.size() : 0);
  return n;
}

ParamCount param_count(const ModelSpec& spec, bool include_bias) {
  std::span<const Layer> all(spec.layers);
  return {param_count(all.first(spec.split_index), include_bias),
          param_count(all.subspan(spec.split_index), include_bias)};
}

Tensor model_input(ModelName name, const Tensor& features) {
  if (features.shape() != Shape{kFeatureFrames, kFeatureCoefficients} &&
      features.shape() != Shape{kFeatureSize})
    throw DimensionError("expected a [50, 13] feature map, got " +
                         shape_to_string(features.shape()));
  return features.reshaped(input_shape(name));
}

Tensor model_input(const ModelSpec& spec, const Tensor& features) {
  return model_input(spec.name, features);
}

}  // namespace sfl
