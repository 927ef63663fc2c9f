#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sfl/models.hpp"

namespace sfl {

/// Client half followed by server half. Throws DimensionError if the halves
/// do not compose into a valid model.
ModelSpec merge(const SplitModel& split);

// ---------------------------------------------------------------------------
// int8 quantisation

/// Per-tensor affine int8 encoding: value = scale * (code - zero_point).
struct QuantizedTensor {
  Shape shape;
  float scale = 1.0f;
  std::int8_t zero_point = 0;
  std::vector<std::int8_t> codes;

  double dequantize(std::size_t i) const {
    return double(scale) * (int(codes[i]) - int(zero_point));
  }
  Tensor dequantized() const;

  friend bool operator==(const QuantizedTensor&, const QuantizedTensor&) = default;
};

/// The quantised range is [min(x, 0), max(x, 0)] so that the zero point fits
/// in int8; its ends map to -128 and 127. The scale is rounded up to the next
/// float so every value dequantises within scale / 2. An all-zero tensor
/// gets scale 1, zero point 0. Throws std::domain_error on NaN/Inf.
QuantizedTensor quantize_tensor(const Tensor& values);

struct QuantizedLayer {
  LayerKind kind = LayerKind::ReLU;
  std::array<std::size_t, 4> dims{};
  QuantizedTensor weights;  // empty for parameterless layers
  QuantizedTensor bias;

  friend bool operator==(const QuantizedLayer&, const QuantizedLayer&) = default;
};

struct QuantizedModel {
  ModelName name = ModelName::Model1Mlp;
  std::size_t split_index = 0;
  std::vector<QuantizedLayer> layers;

  friend bool operator==(const QuantizedModel&, const QuantizedModel&) = default;
};

QuantizedModel quantize_int8(const ModelSpec& model);
ModelSpec dequantize(const QuantizedModel& model);

/// Logits for one [50, 13] feature map. Weights are dequantised and the
/// network runs in float.
Tensor quantized_infer(const QuantizedModel& model, const Tensor& features);

// ---------------------------------------------------------------------------
// Files

struct TrainingSnapshot {
  std::string scheme;       // sfl | fl | centralized
  std::string data_source;  // as given on the command line
  std::uint16_t num_clients = 1;
  std::uint32_t epochs = 0;
  float learning_rate = 0.0f;
  float momentum = 0.0f;
  std::uint64_t seed = 0;
  float val_split = 0.0f;
  bool aggregate = true;

  friend bool operator==(const TrainingSnapshot&, const TrainingSnapshot&) = default;
};

struct MetricsSummary {
  float final_val_accuracy = -1.0f;  // -1 when no validation set was used
  float final_train_loss = 0.0f;     // mean over the last epoch
  std::uint32_t steps = 0;

  friend bool operator==(const MetricsSummary&, const MetricsSummary&) = default;
};

struct Checkpoint {
  ModelSpec model;
  TrainingSnapshot config;
  MetricsSummary metrics;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr std::uint16_t kQuantizedVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError (bad magic, version, checksum, truncation, or a
/// layer list that does not match the named topology).
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_quantized(const QuantizedModel& model);
QuantizedModel decode_quantized(std::span<const std::uint8_t> bytes);
void save_quantized(const std::filesystem::path& path, const QuantizedModel& model);
QuantizedModel load_quantized(const std::filesystem::path& path);

}  // namespace sfl
