#include "sfl/data.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sfl/bytes.hpp"
#include "sfl/models.hpp"
#include "sfl/random.hpp"
#include "sfl/wav.hpp"

namespace sfl {
namespace {

// Stream tags for derive_seed so that independent uses of one seed never
// share a generator.
enum SeedStream : std::uint64_t {
  kPrototypeStream = 0x70726f74,
  kSampleStream = 0x73616d70,
  kPartitionStream = 0x70617274,
  kValidationStream = 0x76616c69,
  kEpochStream = 0x65706f63,
};

struct SynthParams {
  float prototype_scale;  // spread of the shared base pattern
  float class_offset;     // spread of each class's deviation from the base
  float texture_scale;    // amplitude of the class-filtered texture
  float noise_scale;      // white noise on top
};

constexpr SynthParams kEasy{0.0f, 1.0f, 0.0f, 0.5f};
constexpr SynthParams kHard{1.0f, 0.13f, 1.0f, 0.3f};

Tensor random_normal(Shape shape, Rng& rng, float scale) {
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = scale * rng.normal();
  return t;
}

constexpr std::uint8_t kFeatureMagic[4] = {'S', 'F', 'L', 'F'};

}  // namespace

std::array<std::size_t, 7> Dataset::class_counts() const {
  std::array<std::size_t, 7> counts{};
  for (const auto& s : samples) ++counts.at(s.label);
  return counts;
}

std::uint8_t label_for_folder(std::string_view folder) {
  for (std::uint8_t i = 0; i < 5; ++i)
    if (folder == kClassNames[i]) return i;
  if (folder == "silence" || folder == "_silence_" ||
      folder == "_background_noise_")
    return kSilenceLabel;
  return kUnknownLabel;
}

std::vector<std::int16_t> fit_clip(std::span<const std::int16_t> audio) {
  std::vector<std::int16_t> clip(kClipSamples, 0);
  std::copy_n(audio.begin(), std::min(audio.size(), kClipSamples), clip.begin());
  return clip;
}

Dataset load_wav_corpus(const std::filesystem::path& root,
                        const MfccConfig& cfg) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root))
    throw std::runtime_error("corpus root " + root.string() +
                             " is not a directory");
  std::vector<fs::path> folders;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) folders.push_back(entry.path());
  std::sort(folders.begin(), folders.end());

  Dataset ds;
  ds.provenance = Provenance::WavCorpus;
  for (const auto& folder : folders) {
    const auto label = label_for_folder(folder.filename().string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(folder))
      if (entry.is_regular_file() && entry.path().extension() == ".wav")
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      auto clip = fit_clip(read_wav(file, static_cast<std::uint32_t>(cfg.sample_rate)));
      ds.samples.push_back({mfcc_extract(clip, cfg).values, label});
    }
  }
  if (ds.empty())
    throw std::runtime_error("no .wav files found under " + root.string());
  return ds;
}

Dataset synth_dataset(std::uint64_t seed, std::size_t samples_per_class,
                      Difficulty difficulty) {
  if (samples_per_class == 0)
    throw std::invalid_argument("samples_per_class must be at least 1");
  const SynthParams& p = difficulty == Difficulty::Easy ? kEasy : kHard;
  const Shape shape{kFeatureFrames, kFeatureCoefficients};

  Rng proto_rng(derive_seed(seed, kPrototypeStream));
  Tensor base = random_normal(shape, proto_rng, p.prototype_scale);
  std::vector<Tensor> prototypes, kernels;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    Tensor proto = random_normal(shape, proto_rng, p.class_offset);
    for (std::size_t i = 0; i < proto.size(); ++i) proto[i] += base[i];
    prototypes.push_back(std::move(proto));
    Tensor k = random_normal({3, 3}, proto_rng, 1.0f);
    float norm = 0.0f;
    for (float v : k.values()) norm += v * v;
    norm = std::sqrt(norm);
    for (float& v : k.values()) v /= norm;
    kernels.push_back(std::move(k));
  }

  Rng rng(derive_seed(seed, kSampleStream));
  Dataset ds;
  ds.provenance = Provenance::Synthetic;
  ds.samples.reserve(samples_per_class * kNumClasses);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    for (std::size_t n = 0; n < samples_per_class; ++n) {
      Tensor x = prototypes[c];
      if (p.texture_scale > 0.0f) {
        // Valid 3x3 filtering of a (H+2)x(W+2) white field.
        const std::size_t h = kFeatureFrames + 2, w = kFeatureCoefficients + 2;
        std::vector<float> field(h * w);
        for (float& v : field) v = rng.normal();
        const Tensor& k = kernels[c];
        for (std::size_t y = 0; y < kFeatureFrames; ++y)
          for (std::size_t xx = 0; xx < kFeatureCoefficients; ++xx) {
            float acc = 0.0f;
            for (std::size_t ky = 0; ky < 3; ++ky)
              for (std::size_t kx = 0; kx < 3; ++kx)
                acc += k[ky * 3 + kx] * field[(y + ky) * w + xx + kx];
            x[y * kFeatureCoefficients + xx] += p.texture_scale * acc;
          }
      }
      for (float& v : x.values()) v += p.noise_scale * rng.normal();
      ds.samples.push_back({std::move(x), static_cast<std::uint8_t>(c)});
    }
  }
  return ds;
}

std::vector<Dataset> partition(const Dataset& ds, std::size_t clients,
                               std::uint64_t seed) {
  if (clients == 0) throw std::invalid_argument("partition: zero clients");
  if (clients > ds.size())
    throw std::invalid_argument("partition: " + std::to_string(clients) +
                                " clients but only " +
                                std::to_string(ds.size()) + " samples");
  const auto order = seeded_permutation(ds.size(), derive_seed(seed, kPartitionStream));
  const std::size_t base = ds.size() / clients, extra = ds.size() % clients;
  std::vector<Dataset> shards(clients);
  std::size_t next = 0;
  for (std::size_t i = 0; i < clients; ++i) {
    shards[i].class_names = ds.class_names;
    shards[i].provenance = ds.provenance;
    const std::size_t n = base + (i < extra ? 1 : 0);
    for (std::size_t j = 0; j < n; ++j) shards[i].samples.push_back(ds.samples[order[next++]]);
  }
  return shards;
}

TrainValidationSplit split_train_validation(const Dataset& ds, double fraction,
                                            std::uint64_t seed) {
  if (fraction < 0.0 || fraction >= 1.0)
    throw std::invalid_argument("validation fraction must lie in [0, 1)");
  TrainValidationSplit out;
  out.train.class_names = out.validation.class_names = ds.class_names;
  out.train.provenance = out.validation.provenance = ds.provenance;
  for (std::uint8_t c = 0; c < kNumClasses; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.samples[i].label == c) members.push_back(i);
    if (members.empty()) continue;
    Rng rng(derive_seed(seed, kValidationStream, c));
    rng.shuffle(std::span<std::size_t>(members));
    auto held = static_cast<std::size_t>(std::lround(fraction * double(members.size())));
    held = std::min(held, members.size() - 1);
    const std::size_t keep = members.size() - held;
    for (std::size_t j = 0; j < members.size(); ++j)
      (j < keep ? out.train : out.validation).samples.push_back(ds.samples[members[j]]);
  }
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed,
                                     std::size_t client, std::size_t epoch) {
  return seeded_permutation(
      n, derive_seed(seed, kEpochStream ^ (std::uint64_t(client) << 32), epoch));
}

std::vector<std::uint8_t> encode_feature_file(const Dataset& ds) {
  ByteWriter out;
  out.raw(kFeatureMagic);
  out.u32(static_cast<std::uint32_t>(ds.size()));
  for (const auto& s : ds.samples) {
    if (s.features.size() != kFeatureSize)
      throw DimensionError("feature file samples must hold 650 values");
    out.u8(s.label);
    for (float v : s.features.values()) out.f32(v);
  }
  return out.take();
}

Dataset decode_feature_file(std::span<const std::uint8_t> bytes) {
  using Kind = FormatError::Kind;
  ByteReader in(bytes);
  try {
    auto magic = in.raw(4);
    if (!std::equal(magic.begin(), magic.end(), kFeatureMagic))
      throw FormatError(Kind::BadMagic, "not an SFLF feature file");
    const std::uint32_t count = in.u32();
    if (count > in.remaining() / (1 + 4 * kFeatureSize))
      throw FormatError(Kind::Truncated, "feature file declares " +
                                             std::to_string(count) +
                                             " samples but is too short");
    Dataset ds;
    ds.provenance = Provenance::FeatureFile;
    ds.samples.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
      Sample s;
      s.label = in.u8();
      if (s.label >= kNumClasses)
        throw FormatError(Kind::Invalid, "label " + std::to_string(s.label) +
                                             " out of range in sample " +
                                             std::to_string(i));
      std::vector<float> values(kFeatureSize);
      for (float& v : values) v = in.f32();
      s.features = Tensor({kFeatureFrames, kFeatureCoefficients}, std::move(values));
      ds.samples.push_back(std::move(s));
    }
    if (!in.at_end())
      throw FormatError(Kind::Invalid, "trailing bytes after feature records");
    return ds;
  } catch (const TruncatedError& e) {
    throw FormatError(Kind::Truncated, std::string("truncated feature file: ") + e.what());
  }
}

void write_feature_file(const std::filesystem::path& path, const Dataset& ds) {
  write_file(path, encode_feature_file(ds));
}

Dataset read_feature_file(const std::filesystem::path& path) {
  return decode_feature_file(read_file(path));
}

Dataset load_data_source(std::string_view source, std::uint64_t seed) {
  auto starts = [&](std::string_view prefix) {
    return source.substr(0, prefix.size()) == prefix;
  };
  if (starts("wav:")) return load_wav_corpus(std::string(source.substr(4)));
  if (starts("features:")) return read_feature_file(std::string(source.substr(9)));
  if (starts("synth:")) {
    auto rest = source.substr(6);
    auto colon = rest.find(':');
    auto level = rest.substr(0, colon);
    Difficulty difficulty;
    std::size_t per_class;
    if (level == "easy") {
      difficulty = Difficulty::Easy;
      per_class = 50;
    } else if (level == "hard") {
      difficulty = Difficulty::Hard;
      per_class = 1000;
    } else {
      throw std::invalid_argument("unknown synthetic difficulty '" +
                                  std::string(level) + "' (easy or hard)");
    }
    if (colon != std::string_view::npos) {
      const std::string count(rest.substr(colon + 1));
      std::size_t used = 0;
      unsigned long long v = 0;
      try {
        v = std::stoull(count, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != count.size() || v == 0)
        throw std::invalid_argument("bad samples-per-class '" + count + "'");
      per_class = static_cast<std::size_t>(v);
    }
    return synth_dataset(seed, per_class, difficulty);
  }
  throw std::invalid_argument("unknown data source '" + std::string(source) +
                              "' (use synth:easy|hard[:N], wav:<dir> or "
                              "features:<file>)");
}

}  // namespace sfl
