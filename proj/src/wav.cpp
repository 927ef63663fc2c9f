#include "sfl/wav.hpp"

#include <string>

#include "sfl/bytes.hpp"

namespace sfl {

namespace {
constexpr std::uint16_t kFormatPcm = 1;
}

std::vector<std::int16_t> parse_wav(std::span<const std::uint8_t> bytes,
                                    std::uint32_t expected_rate) {
  ByteReader in(bytes);
  try {
    auto riff = in.raw(4);
    in.u32();  // RIFF size; not trusted, chunks are walked instead
    auto wave = in.raw(4);
    if (std::string(riff.begin(), riff.end()) != "RIFF" ||
        std::string(wave.begin(), wave.end()) != "WAVE")
      throw WavError("not a RIFF/WAVE file");

    bool have_fmt = false;
    while (!in.at_end()) {
      auto id_bytes = in.raw(4);
      const std::string id(id_bytes.begin(), id_bytes.end());
      const std::uint32_t size = in.u32();
      if (id == "fmt ") {
        ByteReader fmt(in.raw(size));
        const auto format = fmt.u16();
        const auto channels = fmt.u16();
        const auto rate = fmt.u32();
        fmt.u32();  // byte rate
        fmt.u16();  // block align
        const auto bits = fmt.u16();
        if (format != kFormatPcm)
          throw WavError("unsupported WAV encoding " + std::to_string(format) +
                         " (need PCM)");
        if (channels != 1)
          throw WavError("expected mono audio, got " + std::to_string(channels) +
                         " channels");
        if (bits != 16)
          throw WavError("expected 16-bit samples, got " + std::to_string(bits));
        if (rate != expected_rate)
          throw WavError("expected " + std::to_string(expected_rate) +
                         " Hz, got " + std::to_string(rate));
        have_fmt = true;
      } else if (id == "data") {
        if (!have_fmt) throw WavError("data chunk precedes fmt chunk");
        // Some writers leave a bogus size on the last chunk; clamp to file.
        const std::size_t n = std::min<std::size_t>(size, in.remaining());
        auto data = in.raw(n - n % 2);
        std::vector<std::int16_t> samples(data.size() / 2);
        for (std::size_t i = 0; i < samples.size(); ++i)
          samples[i] = static_cast<std::int16_t>(data[2 * i] | (data[2 * i + 1] << 8));
        return samples;
      } else {
        in.raw(std::min<std::size_t>(size, in.remaining()));
      }
      if (size % 2 && !in.at_end()) in.u8();  // chunks are word aligned
    }
  } catch (const TruncatedError& e) {
    throw WavError(std::string("truncated WAV file: ") + e.what());
  }
  throw WavError("WAV file has no data chunk");
}

std::vector<std::int16_t> read_wav(const std::filesystem::path& path,
                                   std::uint32_t expected_rate) {
  auto bytes = read_file(path);
  try {
    return parse_wav(bytes, expected_rate);
  } catch (const WavError& e) {
    throw WavError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_wav(std::span<const std::int16_t> samples,
                                     std::uint32_t sample_rate) {
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  ByteWriter out;
  out.raw("RIFF");
  out.u32(36 + data_bytes);
  out.raw("WAVE");
  out.raw("fmt ");
  out.u32(16);
  out.u16(kFormatPcm);
  out.u16(1);
  out.u32(sample_rate);
  out.u32(sample_rate * 2);
  out.u16(2);
  out.u16(16);
  out.raw("data");
  out.u32(data_bytes);
  for (auto s : samples) out.u16(static_cast<std::uint16_t>(s));
  return out.take();
}

void write_wav(const std::filesystem::path& path,
               std::span<const std::int16_t> samples, std::uint32_t sample_rate) {
  write_file(path, encode_wav(samples, sample_rate));
}

}  // namespace sfl
