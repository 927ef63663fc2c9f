#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "sfl/nn.hpp"

namespace sfl {

inline constexpr std::size_t kNumClasses = 7;
inline constexpr std::size_t kFeatureFrames = 50;
inline constexpr std::size_t kFeatureCoefficients = 13;
inline constexpr std::size_t kFeatureSize = kFeatureFrames * kFeatureCoefficients;

enum class ModelName : std::uint8_t { Model1Mlp, Model2Cnn, Model3Cnn };
enum class ModelFamily : std::uint8_t { Mlp, Cnn };

std::string_view to_string(ModelName name);
/// Accepts "model1_mlp", "model2_cnn", "model3_cnn".
ModelName parse_model_name(std::string_view text);
ModelFamily family_of(ModelName name);

/// Full layer stack plus the cut: layers [0, split_index) run on the client.
struct ModelSpec {
  ModelName name = ModelName::Model1Mlp;
  std::vector<Layer> layers;
  std::size_t split_index = 0;
  Shape input_shape;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct SplitModel {
  ModelName name = ModelName::Model1Mlp;
  std::vector<Layer> client;
  std::vector<Layer> server;

  friend bool operator==(const SplitModel&, const SplitModel&) = default;
};

/// Network topologies:
///   model1_mlp  FC(650->25) ReLU | FC(25->7)
///   model2_cnn  Conv(1->12,3x3) ReLU | Conv(12->16,3x3) ReLU Flatten
///               FC(6624->128) ReLU FC(128->7)
///   model3_cnn  Conv(1->12,3x3) ReLU | Conv(12->30,3x3) ReLU Flatten
///               FC(12420->256) ReLU FC(256->7)
/// All parameters are zero; see initialize().
ModelSpec build(ModelName name);

/// build() followed by initialize_uniform(layers, seed).
ModelSpec build(ModelName name, std::uint64_t seed);

/// Throws DimensionError unless the stack maps input_shape to [7] and the
/// split index is in range.
void validate(const ModelSpec& spec);

SplitModel split(const ModelSpec& spec);

/// Shape of the activation the client half sends to the server.
Shape client_output_shape(const ModelSpec& spec);

struct ParamCount {
  std::size_t client = 0;
  std::size_t server = 0;
  std::size_t total() const { return client + server; }
};

std::size_t param_count(std::span<const Layer> layers, bool include_bias);
ParamCount param_count(const ModelSpec& spec, bool include_bias);

/// Reshapes a [50, 13] feature map into the model's input layout:
/// [650] for the MLP, [1, 50, 13] for the CNNs.
Tensor model_input(const ModelSpec& spec, const Tensor& features);
Tensor model_input(ModelName name, const Tensor& features);
Shape input_shape(ModelName name);

}  // namespace sfl
