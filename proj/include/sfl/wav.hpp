#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

namespace sfl {

class WavError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses a RIFF/WAVE image holding 16-bit PCM mono audio at
/// `expected_rate` Hz. Unknown chunks are skipped; anything else (other
/// encodings, channel counts, bit depths or rates) is rejected.
std::vector<std::int16_t> parse_wav(std::span<const std::uint8_t> bytes,
                                    std::uint32_t expected_rate = 16000);

std::vector<std::int16_t> read_wav(const std::filesystem::path& path,
                                   std::uint32_t expected_rate = 16000);

std::vector<std::uint8_t> encode_wav(std::span<const std::int16_t> samples,
                                     std::uint32_t sample_rate = 16000);

void write_wav(const std::filesystem::path& path,
               std::span<const std::int16_t> samples,
               std::uint32_t sample_rate = 16000);

}  // namespace sfl
