#include "sfl/bytes.hpp"

#include <fstream>
#include <iterator>
#include <limits>

#include <zlib.h>

namespace sfl {

namespace {
constexpr std::size_t kMaxTensorRank = 8;
}

void ByteWriter::short_string(std::string_view s) {
  if (s.size() > 255) throw std::length_error("string longer than 255 bytes");
  u8(static_cast<std::uint8_t>(s.size()));
  raw(s);
}

void ByteWriter::tensor(const Tensor& t) {
  if (t.rank() == 0 || t.rank() > kMaxTensorRank)
    throw std::invalid_argument("cannot serialise tensor of rank " +
                                std::to_string(t.rank()));
  u8(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) {
    if (d > std::numeric_limits<std::uint32_t>::max())
      throw std::length_error("tensor dimension exceeds u32");
    u32(static_cast<std::uint32_t>(d));
  }
  buf_.reserve(buf_.size() + 4 * t.size());
  for (float v : t.values()) f32(v);
}

std::uint64_t ByteReader::get(int n) {
  if (remaining() < static_cast<std::size_t>(n))
    throw TruncatedError("need " + std::to_string(n) + " bytes at offset " +
                         std::to_string(pos_) + ", only " +
                         std::to_string(remaining()) + " left");
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i)
    v |= std::uint64_t(bytes_[pos_ + i]) << (8 * i);
  pos_ += n;
  return v;
}

std::span<const std::uint8_t> ByteReader::raw(std::size_t n) {
  if (remaining() < n)
    throw TruncatedError("need " + std::to_string(n) + " bytes at offset " +
                         std::to_string(pos_) + ", only " +
                         std::to_string(remaining()) + " left");
  auto out = bytes_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::string ByteReader::short_string() {
  auto n = u8();
  auto bytes = raw(n);
  return std::string(bytes.begin(), bytes.end());
}

Tensor ByteReader::tensor() {
  const std::size_t rank = u8();
  if (rank == 0 || rank > kMaxTensorRank)
    throw BlobError("tensor rank " + std::to_string(rank) + " out of range");
  Shape shape(rank);
  std::size_t count = 1;
  for (auto& d : shape) {
    d = u32();
    if (d == 0) throw BlobError("tensor dimension is zero");
    if (count > remaining() / d)
      throw BlobError("tensor dims exceed the remaining payload");
    count *= d;
  }
  if (count > remaining() / 4)
    throw BlobError("tensor of " + std::to_string(count) + " floats but only " +
                    std::to_string(remaining()) + " bytes remain");
  std::vector<float> data(count);
  for (auto& v : data) v = f32();
  return Tensor(std::move(shape), std::move(data));
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in pieces.
  while (!bytes.empty()) {
    const std::size_t n = std::min<std::size_t>(bytes.size(), 1u << 30);
    crc = ::crc32(crc, bytes.data(), static_cast<uInt>(n));
    bytes = bytes.subspan(n);
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace sfl
