#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "sfl/tensor.hpp"

namespace sfl::wire {

// Frame layout (all integers little-endian):
//
//   offset  size  field
//   0       4     magic "SFL1"
//   4       1     type tag
//   5       4     round (u32)
//   9       2     client id (u16)
//   11      4     payload length N (u32)
//   15      N     payload
//   15+N    4     CRC-32 of bytes [0, 15+N)
//
// Tensor blobs inside payloads are: u8 rank, rank x u32 dims, f32 values.

inline constexpr std::size_t kHeaderSize = 15;
inline constexpr std::size_t kTrailerSize = 4;
inline constexpr std::size_t kFrameOverhead = kHeaderSize + kTrailerSize;
inline constexpr std::size_t kMaxPayload = std::size_t{1} << 31;

enum class MessageType : std::uint8_t {
  Hello = 1,
  TrainConfig = 2,
  ModelPush = 3,
  Activation = 4,
  Gradient = 5,
  ModelUpload = 6,
  RoundDone = 7,
  Bye = 8,
};

std::string_view to_string(MessageType type);

/// Client -> server on connect: how many training samples it holds.
struct Hello {
  std::uint32_t shard_size = 0;
  friend bool operator==(const Hello&, const Hello&) = default;
};

/// Server -> client after all HELLOs: hyperparameters of the run.
struct TrainConfig {
  std::string model_name;
  std::uint16_t num_clients = 0;
  std::uint32_t epochs = 0;
  float learning_rate = 0.0f;
  float momentum = 0.0f;
  std::uint64_t seed = 0;
  bool aggregate = true;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Client-half parameters, in canonical parameter order.
struct ModelPush {
  std::vector<Tensor> tensors;
  friend bool operator==(const ModelPush&, const ModelPush&) = default;
};

/// Client output for one sample plus its label.
struct Activation {
  std::uint8_t label = 0;
  Tensor tensor;
  friend bool operator==(const Activation&, const Activation&) = default;
};

/// Loss gradient with respect to the activation.
struct Gradient {
  Tensor tensor;
  friend bool operator==(const Gradient&, const Gradient&) = default;
};

struct ModelUpload {
  std::vector<Tensor> tensors;
  friend bool operator==(const ModelUpload&, const ModelUpload&) = default;
};

struct RoundDone {
  friend bool operator==(const RoundDone&, const RoundDone&) = default;
};

struct Bye {
  friend bool operator==(const Bye&, const Bye&) = default;
};

// Alternative index + 1 == MessageType value.
using Payload = std::variant<Hello, TrainConfig, ModelPush, Activation,
                             Gradient, ModelUpload, RoundDone, Bye>;

struct Message {
  std::uint32_t round = 0;
  std::uint16_t client_id = 0;
  Payload payload;

  MessageType type() const {
    return static_cast<MessageType>(payload.index() + 1);
  }
  friend bool operator==(const Message&, const Message&) = default;
};

class ProtocolError : public std::runtime_error {
 public:
  enum class Kind {
    BadMagic,
    BadCrc,
    Truncated,
    UnknownType,
    LengthMismatch,  // payload inconsistent with its declared contents
    Oversized,       // payload above kMaxPayload
    Unexpected,      // well-formed message that is wrong at this point
  };

  ProtocolError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::string_view to_string(ProtocolError::Kind kind);

std::vector<std::uint8_t> encode_payload(const Payload& payload);
std::vector<std::uint8_t> encode(const Message& msg);

/// Decodes exactly one frame; the span must hold nothing else. Never reads
/// out of bounds; every malformed input raises ProtocolError.
Message decode(std::span<const std::uint8_t> frame);

/// Total frame length announced by a header, after checking the magic.
/// Requires at least kHeaderSize bytes.
std::size_t frame_length(std::span<const std::uint8_t> header);

/// Splits a byte stream into frames. Bytes may arrive in arbitrary pieces.
class FrameReader {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  /// Next complete frame, if one is buffered.
  std::optional<std::vector<std::uint8_t>> next();
  std::size_t buffered() const { return buf_.size(); }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Frame size of an ACTIVATION carrying a tensor of `shape`.
std::size_t activation_frame_size(const Shape& shape);

}  // namespace sfl::wire
