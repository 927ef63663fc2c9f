#include "sfl/protocol.hpp"

#include <algorithm>
#include <limits>

#include "sfl/bytes.hpp"

namespace sfl::wire {
namespace {

constexpr std::uint8_t kMagic[4] = {'S', 'F', 'L', '1'};
constexpr std::uint16_t kMaxTensorsPerModel = 1024;

void write_tensor_list(ByteWriter& out, const std::vector<Tensor>& tensors) {
  if (tensors.size() > kMaxTensorsPerModel)
    throw std::length_error("too many tensors in one model message");
  out.u16(static_cast<std::uint16_t>(tensors.size()));
  for (const auto& t : tensors) out.tensor(t);
}

std::vector<Tensor> read_tensor_list(ByteReader& in) {
  const std::uint16_t n = in.u16();
  if (n > kMaxTensorsPerModel)
    throw BlobError("tensor count " + std::to_string(n) + " too large");
  std::vector<Tensor> out;
  out.reserve(n);
  for (std::uint16_t i = 0; i < n; ++i) out.push_back(in.tensor());
  return out;
}

Payload decode_payload(MessageType type, ByteReader& in) {
  switch (type) {
    case MessageType::Hello:
      return Hello{in.u32()};
    case MessageType::TrainConfig: {
      TrainConfig c;
      c.model_name = in.short_string();
      c.num_clients = in.u16();
      c.epochs = in.u32();
      c.learning_rate = in.f32();
      c.momentum = in.f32();
      c.seed = in.u64();
      const std::uint8_t flag = in.u8();
      if (flag > 1) throw BlobError("aggregate flag must be 0 or 1");
      c.aggregate = flag == 1;
      return c;
    }
    case MessageType::ModelPush:
      return ModelPush{read_tensor_list(in)};
    case MessageType::Activation: {
      Activation a;
      a.label = in.u8();
      a.tensor = in.tensor();
      return a;
    }
    case MessageType::Gradient:
      return Gradient{in.tensor()};
    case MessageType::ModelUpload:
      return ModelUpload{read_tensor_list(in)};
    case MessageType::RoundDone:
      return RoundDone{};
    case MessageType::Bye:
      return Bye{};
  }
  throw ProtocolError(ProtocolError::Kind::UnknownType, "unknown message type");
}

}  // namespace

std::string_view to_string(MessageType type) {
  switch (type) {
    case MessageType::Hello: return "HELLO";
    case MessageType::TrainConfig: return "TRAIN_CONFIG";
    case MessageType::ModelPush: return "MODEL_PUSH";
    case MessageType::Activation: return "ACTIVATION";
    case MessageType::Gradient: return "GRADIENT";
    case MessageType::ModelUpload: return "MODEL_UPLOAD";
    case MessageType::RoundDone: return "ROUND_DONE";
    case MessageType::Bye: return "BYE";
  }
  return "UNKNOWN";
}

std::string_view to_string(ProtocolError::Kind kind) {
  using K = ProtocolError::Kind;
  switch (kind) {
    case K::BadMagic: return "bad magic";
    case K::BadCrc: return "bad crc";
    case K::Truncated: return "truncated";
    case K::UnknownType: return "unknown type";
    case K::LengthMismatch: return "length mismatch";
    case K::Oversized: return "oversized";
    case K::Unexpected: return "unexpected message";
  }
  return "unknown";
}

std::vector<std::uint8_t> encode_payload(const Payload& payload) {
  ByteWriter out;
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Hello>) {
          out.u32(p.shard_size);
        } else if constexpr (std::is_same_v<T, TrainConfig>) {
          out.short_string(p.model_name);
          out.u16(p.num_clients);
          out.u32(p.epochs);
          out.f32(p.learning_rate);
          out.f32(p.momentum);
          out.u64(p.seed);
          out.u8(p.aggregate ? 1 : 0);
        } else if constexpr (std::is_same_v<T, ModelPush> ||
                             std::is_same_v<T, ModelUpload>) {
          write_tensor_list(out, p.tensors);
        } else if constexpr (std::is_same_v<T, Activation>) {
          out.u8(p.label);
          out.tensor(p.tensor);
        } else if constexpr (std::is_same_v<T, Gradient>) {
          out.tensor(p.tensor);
        }
      },
      payload);
  return out.take();
}

std::vector<std::uint8_t> encode(const Message& msg) {
  auto body = encode_payload(msg.payload);
  if (body.size() > kMaxPayload)
    throw ProtocolError(ProtocolError::Kind::Oversized,
                        "payload of " + std::to_string(body.size()) +
                            " bytes exceeds the 2^31 limit");
  ByteWriter out;
  out.buffer().reserve(kFrameOverhead + body.size());
  out.raw(kMagic);
  out.u8(static_cast<std::uint8_t>(msg.type()));
  out.u32(msg.round);
  out.u16(msg.client_id);
  out.u32(static_cast<std::uint32_t>(body.size()));
  out.raw(body);
  out.u32(crc32(out.buffer()));
  return out.take();
}

namespace {
void check_magic(std::span<const std::uint8_t> bytes) {
  const std::size_t n = std::min<std::size_t>(bytes.size(), 4);
  if (!std::equal(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n), kMagic))
    throw ProtocolError(ProtocolError::Kind::BadMagic,
                        "frame does not start with SFL1");
}
}  // namespace

std::size_t frame_length(std::span<const std::uint8_t> header) {
  using K = ProtocolError::Kind;
  check_magic(header);
  if (header.size() < kHeaderSize)
    throw ProtocolError(K::Truncated, "frame header needs " +
                                          std::to_string(kHeaderSize) +
                                          " bytes, got " +
                                          std::to_string(header.size()));
  ByteReader in(header.subspan(11, 4));
  const std::size_t payload = in.u32();
  if (payload > kMaxPayload)
    throw ProtocolError(K::Oversized, "declared payload of " +
                                          std::to_string(payload) +
                                          " bytes exceeds the 2^31 limit");
  return kFrameOverhead + payload;
}

Message decode(std::span<const std::uint8_t> frame) {
  using K = ProtocolError::Kind;
  const std::size_t total = frame_length(frame);
  if (frame.size() < total)
    throw ProtocolError(K::Truncated, "frame needs " + std::to_string(total) +
                                          " bytes, got " +
                                          std::to_string(frame.size()));
  if (frame.size() > total)
    throw ProtocolError(K::LengthMismatch,
                        std::to_string(frame.size() - total) +
                            " bytes after the end of the frame");

  ByteReader trailer(frame.subspan(total - kTrailerSize));
  if (crc32(frame.first(total - kTrailerSize)) != trailer.u32())
    throw ProtocolError(K::BadCrc, "frame checksum mismatch");

  ByteReader in(frame.first(total - kTrailerSize));
  in.raw(4);
  const std::uint8_t tag = in.u8();
  Message msg;
  msg.round = in.u32();
  msg.client_id = in.u16();
  const std::uint32_t payload_len = in.u32();
  if (tag < 1 || tag > std::variant_size_v<Payload>)
    throw ProtocolError(K::UnknownType, "unknown message type " + std::to_string(tag));

  ByteReader body(in.raw(payload_len));
  try {
    msg.payload = decode_payload(static_cast<MessageType>(tag), body);
  } catch (const TruncatedError& e) {
    throw ProtocolError(K::LengthMismatch,
                        std::string(to_string(static_cast<MessageType>(tag))) +
                            " payload too short: " + e.what());
  } catch (const BlobError& e) {
    throw ProtocolError(K::LengthMismatch,
                        std::string(to_string(static_cast<MessageType>(tag))) +
                            " payload malformed: " + e.what());
  }
  if (!body.at_end())
    throw ProtocolError(K::LengthMismatch,
                        std::string(to_string(static_cast<MessageType>(tag))) +
                            " payload has " + std::to_string(body.remaining()) +
                            " unused bytes");
  return msg;
}

void FrameReader::feed(std::span<const std::uint8_t> bytes) {
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

std::optional<std::vector<std::uint8_t>> FrameReader::next() {
  if (buf_.size() < kHeaderSize) {
    check_magic(buf_);
    return std::nullopt;
  }
  const std::size_t total = frame_length(buf_);
  if (buf_.size() < total) return std::nullopt;
  std::vector<std::uint8_t> frame(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(total));
  buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(total));
  return frame;
}

std::size_t activation_frame_size(const Shape& shape) {
  return kFrameOverhead + 1 + 1 + 4 * shape.size() + 4 * element_count(shape);
}

}  // namespace sfl::wire
