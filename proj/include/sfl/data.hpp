#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sfl/mfcc.hpp"
#include "sfl/tensor.hpp"

namespace sfl {

/// Label order used everywhere: one..five, silence, unknown.
inline constexpr std::array<std::string_view, 7> kClassNames = {
    "one", "two", "three", "four", "five", "silence", "unknown"};
inline constexpr std::uint8_t kSilenceLabel = 5;
inline constexpr std::uint8_t kUnknownLabel = 6;
inline constexpr std::size_t kClipSamples = 16000;

enum class Provenance : std::uint8_t { Synthetic, WavCorpus, FeatureFile };
enum class Difficulty : std::uint8_t { Easy, Hard };

struct Sample {
  Tensor features;  // [50, 13]
  std::uint8_t label = 0;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> class_names{kClassNames.begin(), kClassNames.end()};
  Provenance provenance = Provenance::Synthetic;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::array<std::size_t, 7> class_counts() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Loads root/<class>/*.wav. Folder names one..five and silence (also
/// _silence_, _background_noise_) map to their labels; any other folder
/// counts as unknown. Clips are zero-padded or truncated to 16000 samples
/// before feature extraction. Files are visited in lexicographic order.
Dataset load_wav_corpus(const std::filesystem::path& root,
                        const MfccConfig& cfg = {});

/// Label for a corpus folder name.
std::uint8_t label_for_folder(std::string_view folder);

/// Zero-pads or truncates to exactly kClipSamples.
std::vector<std::int16_t> fit_clip(std::span<const std::int16_t> audio);

/// Seeded stand-in for a recorded keyword corpus. Each class has a fixed
/// random 50x13 prototype; every sample is prototype + noise.
///   easy: well-separated prototypes, small white noise (linearly separable)
///   hard: prototypes that differ only slightly, plus a zero-mean texture
///         made by filtering white noise with a class-specific 3x3 kernel.
///         The texture carries most of the class information and is
///         invisible to a linear read-out of the raw features.
Dataset synth_dataset(std::uint64_t seed, std::size_t samples_per_class,
                      Difficulty difficulty);

/// Seeded shuffle cut into `clients` shards whose sizes differ by at most one.
std::vector<Dataset> partition(const Dataset& ds, std::size_t clients,
                               std::uint64_t seed);

struct TrainValidationSplit {
  Dataset train;
  Dataset validation;
};

/// Stratified hold-out: each class is shuffled with the seed and its last
/// round(fraction * count) samples go to validation (at least one sample
/// of a class stays in training).
TrainValidationSplit split_train_validation(const Dataset& ds, double fraction,
                                            std::uint64_t seed);

/// Visiting order for one client's shard in one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed,
                                     std::size_t client, std::size_t epoch);

// Feature files: "SFLF", u32 count, then per sample u8 label + 650 f32 LE.
std::vector<std::uint8_t> encode_feature_file(const Dataset& ds);
Dataset decode_feature_file(std::span<const std::uint8_t> bytes);
void write_feature_file(const std::filesystem::path& path, const Dataset& ds);
Dataset read_feature_file(const std::filesystem::path& path);

/// Resolves a data source string:
///   synth:easy[:N] / synth:hard[:N]   N samples per class (50 / 1000)
///   wav:<dir>                          Speech-Commands style corpus
///   features:<file>                    SFLF feature file
/// The seed only affects synthetic sources.
Dataset load_data_source(std::string_view source, std::uint64_t seed);

}  // namespace sfl
