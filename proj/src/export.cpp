#include "sfl/export.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "sfl/bytes.hpp"

namespace sfl {
namespace {

using Kind = FormatError::Kind;

constexpr std::uint8_t kCheckpointMagic[4] = {'S', 'F', 'L', 'C'};
constexpr std::uint8_t kQuantizedMagic[4] = {'S', 'F', 'L', 'Q'};

void write_long_string(ByteWriter& out, const std::string& s) {
  if (s.size() > 0xffff) throw std::length_error("string longer than 65535 bytes");
  out.u16(static_cast<std::uint16_t>(s.size()));
  out.raw(s);
}

std::string read_long_string(ByteReader& in) {
  auto bytes = in.raw(in.u16());
  return {bytes.begin(), bytes.end()};
}

void write_layer_header(ByteWriter& out, LayerKind kind,
                        const std::array<std::size_t, 4>& dims) {
  out.u8(static_cast<std::uint8_t>(kind));
  for (auto d : dims) out.u32(static_cast<std::uint32_t>(d));
}

std::pair<LayerKind, std::array<std::size_t, 4>> read_layer_header(ByteReader& in) {
  const std::uint8_t kind = in.u8();
  if (kind < 1 || kind > 4)
    throw FormatError(Kind::Invalid, "unknown layer kind " + std::to_string(kind));
  std::array<std::size_t, 4> dims{};
  for (auto& d : dims) d = in.u32();
  return {static_cast<LayerKind>(kind), dims};
}

// Verifies magic and CRC footer; returns a reader over the body (footer
// excluded) positioned after the magic.
ByteReader open_container(std::span<const std::uint8_t> bytes,
                          const std::uint8_t (&magic)[4], const char* what) {
  if (bytes.size() < 4 ||
      !std::equal(std::begin(magic), std::end(magic), bytes.begin())) {
    if (bytes.size() < 4 &&
        std::equal(bytes.begin(), bytes.end(), std::begin(magic)))
      throw FormatError(Kind::Truncated, std::string(what) + " file is truncated");
    throw FormatError(Kind::BadMagic, std::string("not an ") + what + " file");
  }
  if (bytes.size() < 4 + 2 + 4)
    throw FormatError(Kind::Truncated, std::string(what) + " file is truncated");
  ByteReader footer(bytes.subspan(bytes.size() - 4));
  if (crc32(bytes.first(bytes.size() - 4)) != footer.u32())
    throw FormatError(Kind::BadChecksum,
                      std::string(what) + " checksum mismatch (corrupt file)");
  ByteReader in(bytes.first(bytes.size() - 4));
  in.raw(4);
  return in;
}

// The loaded layer list must be exactly the named topology.
void check_topology(const ModelSpec& spec) {
  const ModelSpec reference = build(spec.name);
  bool same = spec.split_index == reference.split_index &&
              spec.layers.size() == reference.layers.size();
  for (std::size_t i = 0; same && i < spec.layers.size(); ++i)
    same = spec.layers[i].kind == reference.layers[i].kind &&
           spec.layers[i].dims == reference.layers[i].dims;
  if (!same)
    throw FormatError(Kind::Invalid, "layer list does not match topology " +
                                         std::string(to_string(spec.name)));
}

ModelName read_model_name(ByteReader& in) {
  const auto text = in.short_string();
  try {
    return parse_model_name(text);
  } catch (const std::invalid_argument& e) {
    throw FormatError(Kind::Invalid, e.what());
  }
}

void write_quantized_tensor(ByteWriter& out, const QuantizedTensor& q) {
  out.u8(static_cast<std::uint8_t>(q.shape.size()));
  for (auto d : q.shape) out.u32(static_cast<std::uint32_t>(d));
  out.f32(q.scale);
  out.i8(q.zero_point);
  for (auto c : q.codes) out.i8(c);
}

QuantizedTensor read_quantized_tensor(ByteReader& in, const Shape& expected) {
  QuantizedTensor q;
  const std::size_t rank = in.u8();
  q.shape.resize(rank);
  for (auto& d : q.shape) d = in.u32();
  if (q.shape != expected)
    throw FormatError(Kind::Invalid, "tensor shape " + shape_to_string(q.shape) +
                                         " does not match layer dims " +
                                         shape_to_string(expected));
  q.scale = in.f32();
  if (!std::isfinite(q.scale) || !(q.scale > 0.0f))
    throw FormatError(Kind::Invalid, "quantisation scale must be positive");
  q.zero_point = in.i8();
  auto raw = in.raw(element_count(q.shape));
  q.codes.resize(raw.size());
  std::transform(raw.begin(), raw.end(), q.codes.begin(),
                 [](std::uint8_t b) { return static_cast<std::int8_t>(b); });
  return q;
}

Layer empty_layer(LayerKind kind, const std::array<std::size_t, 4>& dims) {
  switch (kind) {
    case LayerKind::FullyConnected: return Layer::fully_connected(dims[0], dims[1]);
    case LayerKind::Conv2D: return Layer::conv2d(dims[0], dims[1], dims[2], dims[3]);
    case LayerKind::ReLU: return Layer::relu();
    case LayerKind::Flatten: return Layer::flatten();
  }
  throw FormatError(Kind::Invalid, "unknown layer kind");
}

// Validates dims against the topology before any allocation happens.
void check_layer_dims(ModelName name, std::size_t index, LayerKind kind,
                      const std::array<std::size_t, 4>& dims) {
  static const ModelSpec refs[] = {build(ModelName::Model1Mlp),
                                   build(ModelName::Model2Cnn),
                                   build(ModelName::Model3Cnn)};
  const auto& ref = refs[static_cast<int>(name)];
  if (index >= ref.layers.size() || ref.layers[index].kind != kind ||
      ref.layers[index].dims != dims)
    throw FormatError(Kind::Invalid, "layer " + std::to_string(index) +
                                         " does not match topology " +
                                         std::string(to_string(name)));
}

template <typename F>
auto translate_truncation(const char* what, F&& body) {
  try {
    return body();
  } catch (const TruncatedError& e) {
    throw FormatError(Kind::Truncated, std::string(what) + " file truncated: " + e.what());
  } catch (const BlobError& e) {
    throw FormatError(Kind::Invalid, std::string(what) + " tensor malformed: " + e.what());
  }
}

}  // namespace

ModelSpec merge(const SplitModel& split) {
  ModelSpec spec;
  spec.name = split.name;
  spec.input_shape = input_shape(split.name);
  spec.split_index = split.client.size();
  spec.layers = split.client;
  spec.layers.insert(spec.layers.end(), split.server.begin(), split.server.end());
  validate(spec);
  return spec;
}

Tensor QuantizedTensor::dequantized() const {
  Tensor t(shape);
  for (std::size_t i = 0; i < codes.size(); ++i)
    t[i] = static_cast<float>(dequantize(i));
  return t;
}

QuantizedTensor quantize_tensor(const Tensor& values) {
  QuantizedTensor q;
  q.shape = values.shape();
  q.codes.assign(values.size(), 0);
  double lo = 0.0, hi = 0.0;
  for (float v : values.values()) {
    if (!std::isfinite(v)) throw std::domain_error("cannot quantise non-finite weights");
    lo = std::min(lo, double(v));
    hi = std::max(hi, double(v));
  }
  if (lo == hi) return q;  // all zero: scale 1, zero point 0

  float scale = static_cast<float>((hi - lo) / 255.0);
  if (double(scale) * 255.0 < hi - lo)
    scale = std::nextafter(scale, std::numeric_limits<float>::infinity());
  const double zp = std::clamp(std::round(-128.0 - lo / double(scale)), -128.0, 127.0);
  q.scale = scale;
  q.zero_point = static_cast<std::int8_t>(zp);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double code = std::round(double(values[i]) / double(scale)) + zp;
    q.codes[i] = static_cast<std::int8_t>(std::clamp(code, -128.0, 127.0));
  }
  return q;
}

QuantizedModel quantize_int8(const ModelSpec& model) {
  validate(model);
  QuantizedModel q;
  q.name = model.name;
  q.split_index = model.split_index;
  for (const auto& layer : model.layers) {
    QuantizedLayer ql{layer.kind, layer.dims, {}, {}};
    if (layer.has_parameters()) {
      ql.weights = quantize_tensor(layer.weights);
      ql.bias = quantize_tensor(layer.bias);
    }
    q.layers.push_back(std::move(ql));
  }
  return q;
}

ModelSpec dequantize(const QuantizedModel& model) {
  ModelSpec spec;
  spec.name = model.name;
  spec.split_index = model.split_index;
  spec.input_shape = input_shape(model.name);
  for (const auto& ql : model.layers) {
    Layer layer = empty_layer(ql.kind, ql.dims);
    if (layer.has_parameters()) {
      if (ql.weights.shape != layer.weights.shape() || ql.bias.shape != layer.bias.shape())
        throw DimensionError("quantised tensor shapes do not match layer dims");
      layer.weights = ql.weights.dequantized();
      layer.bias = ql.bias.dequantized();
    }
    spec.layers.push_back(std::move(layer));
  }
  validate(spec);
  return spec;
}

Tensor quantized_infer(const QuantizedModel& model, const Tensor& features) {
  const ModelSpec spec = dequantize(model);
  return infer(spec.layers, model_input(spec, features));
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  validate(ckpt.model);
  ByteWriter out;
  out.raw(kCheckpointMagic);
  out.u16(kCheckpointVersion);
  out.short_string(to_string(ckpt.model.name));
  out.u16(static_cast<std::uint16_t>(ckpt.model.split_index));
  out.u16(static_cast<std::uint16_t>(ckpt.model.layers.size()));
  for (const auto& layer : ckpt.model.layers) {
    write_layer_header(out, layer.kind, layer.dims);
    if (layer.has_parameters()) {
      out.tensor(layer.weights);
      out.tensor(layer.bias);
    }
  }
  const auto& c = ckpt.config;
  write_long_string(out, c.scheme);
  write_long_string(out, c.data_source);
  out.u16(c.num_clients);
  out.u32(c.epochs);
  out.f32(c.learning_rate);
  out.f32(c.momentum);
  out.u64(c.seed);
  out.f32(c.val_split);
  out.u8(c.aggregate ? 1 : 0);
  out.f32(ckpt.metrics.final_val_accuracy);
  out.f32(ckpt.metrics.final_train_loss);
  out.u32(ckpt.metrics.steps);
  out.u32(crc32(out.buffer()));
  return out.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader in = open_container(bytes, kCheckpointMagic, "SFLC checkpoint");
  return translate_truncation("checkpoint", [&] {
    if (auto v = in.u16(); v != kCheckpointVersion)
      throw FormatError(Kind::BadVersion,
                        "unsupported checkpoint version " + std::to_string(v));
    Checkpoint ckpt;
    ckpt.model.name = read_model_name(in);
    ckpt.model.input_shape = input_shape(ckpt.model.name);
    ckpt.model.split_index = in.u16();
    const std::size_t count = in.u16();
    for (std::size_t i = 0; i < count; ++i) {
      auto [kind, dims] = read_layer_header(in);
      check_layer_dims(ckpt.model.name, i, kind, dims);
      Layer layer = empty_layer(kind, dims);
      if (layer.has_parameters()) {
        Tensor w = in.tensor(), b = in.tensor();
        if (w.shape() != layer.weights.shape() || b.shape() != layer.bias.shape())
          throw FormatError(Kind::Invalid, "parameter shapes do not match layer dims");
        layer.weights = std::move(w);
        layer.bias = std::move(b);
      }
      ckpt.model.layers.push_back(std::move(layer));
    }
    check_topology(ckpt.model);
    auto& c = ckpt.config;
    c.scheme = read_long_string(in);
    c.data_source = read_long_string(in);
    c.num_clients = in.u16();
    c.epochs = in.u32();
    c.learning_rate = in.f32();
    c.momentum = in.f32();
    c.seed = in.u64();
    c.val_split = in.f32();
    c.aggregate = in.u8() != 0;
    ckpt.metrics.final_val_accuracy = in.f32();
    ckpt.metrics.final_train_loss = in.f32();
    ckpt.metrics.steps = in.u32();
    if (!in.at_end())
      throw FormatError(Kind::Invalid, "trailing bytes in checkpoint");
    return ckpt;
  });
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

std::vector<std::uint8_t> encode_quantized(const QuantizedModel& model) {
  ByteWriter out;
  out.raw(kQuantizedMagic);
  out.u16(kQuantizedVersion);
  out.short_string(to_string(model.name));
  out.u16(static_cast<std::uint16_t>(model.split_index));
  out.u16(static_cast<std::uint16_t>(model.layers.size()));
  for (const auto& layer : model.layers) {
    write_layer_header(out, layer.kind, layer.dims);
    if (layer.kind == LayerKind::FullyConnected || layer.kind == LayerKind::Conv2D) {
      write_quantized_tensor(out, layer.weights);
      write_quantized_tensor(out, layer.bias);
    }
  }
  out.u32(crc32(out.buffer()));
  return out.take();
}

QuantizedModel decode_quantized(std::span<const std::uint8_t> bytes) {
  ByteReader in = open_container(bytes, kQuantizedMagic, "SFLQ quantised model");
  return translate_truncation("quantised model", [&] {
    if (auto v = in.u16(); v != kQuantizedVersion)
      throw FormatError(Kind::BadVersion,
                        "unsupported quantised model version " + std::to_string(v));
    QuantizedModel q;
    q.name = read_model_name(in);
    q.split_index = in.u16();
    const std::size_t count = in.u16();
    for (std::size_t i = 0; i < count; ++i) {
      auto [kind, dims] = read_layer_header(in);
      check_layer_dims(q.name, i, kind, dims);
      QuantizedLayer ql{kind, dims, {}, {}};
      const Layer shapes = empty_layer(kind, dims);
      if (shapes.has_parameters()) {
        ql.weights = read_quantized_tensor(in, shapes.weights.shape());
        ql.bias = read_quantized_tensor(in, shapes.bias.shape());
      }
      q.layers.push_back(std::move(ql));
    }
    if (!in.at_end())
      throw FormatError(Kind::Invalid, "trailing bytes in quantised model");
    try {
      check_topology(dequantize(q));
    } catch (const DimensionError& e) {
      throw FormatError(Kind::Invalid, e.what());
    }
    return q;
  });
}

void save_quantized(const std::filesystem::path& path, const QuantizedModel& model) {
  write_file(path, encode_quantized(model));
}

QuantizedModel load_quantized(const std::filesystem::path& path) {
  return decode_quantized(read_file(path));
}

}  // namespace sfl
