#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <unistd.h>

#include "sfl/bytes.hpp"
#include "sfl/data.hpp"
#include "sfl/random.hpp"
#include "sfl/wav.hpp"

using namespace sfl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() / ("sfl_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<std::int16_t> clip(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::int16_t> out(n);
  for (auto& s : out) s = static_cast<std::int16_t>(std::lround(2000.0f * rng.normal()));
  return out;
}

// Two clips per class, one folder per label plus an unmapped folder.
void write_corpus(const fs::path& root) {
  const char* folders[] = {"one", "two", "three", "four", "five", "_silence_", "bed"};
  std::uint64_t seed = 1;
  for (const char* f : folders) {
    fs::create_directories(root / f);
    for (int k = 0; k < 2; ++k)
      write_wav(root / f / ("clip" + std::to_string(k) + ".wav"), clip(4000 + 3000 * k, seed++));
  }
}

// Order-insensitive fingerprint of a dataset.
std::vector<std::pair<int, std::vector<float>>> multiset(const Dataset& ds) {
  std::vector<std::pair<int, std::vector<float>>> out;
  for (const auto& s : ds.samples)
    out.emplace_back(s.label,
                     std::vector<float>(s.features.values().begin(), s.features.values().end()));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("clips are padded or truncated to one second") {
  auto short_clip = clip(8000, 1);
  auto padded = fit_clip(short_clip);
  REQUIRE(padded.size() == kClipSamples);
  CHECK(std::equal(short_clip.begin(), short_clip.end(), padded.begin()));
  CHECK(std::all_of(padded.begin() + 8000, padded.end(), [](auto s) { return s == 0; }));

  auto long_clip = clip(20000, 2);
  auto cut = fit_clip(long_clip);
  REQUIRE(cut.size() == kClipSamples);
  CHECK(std::equal(cut.begin(), cut.end(), long_clip.begin()));
  CHECK(fit_clip({}).size() == kClipSamples);
}

TEST_CASE("folder names map to labels") {
  CHECK(label_for_folder("one") == 0);
  CHECK(label_for_folder("five") == 4);
  CHECK(label_for_folder("silence") == kSilenceLabel);
  CHECK(label_for_folder("_silence_") == kSilenceLabel);
  CHECK(label_for_folder("_background_noise_") == kSilenceLabel);
  CHECK(label_for_folder("bed") == kUnknownLabel);
  CHECK(label_for_folder("six") == kUnknownLabel);
}

TEST_CASE("wav corpus loading") {
  TempDir dir("corpus");
  write_corpus(dir.path);
  const Dataset ds = load_wav_corpus(dir.path);
  CHECK(ds.size() == 14);
  CHECK(ds.provenance == Provenance::WavCorpus);
  for (auto c : ds.class_counts()) CHECK(c == 2);
  for (const auto& s : ds.samples) CHECK(s.features.shape() == Shape{50, 13});
  CHECK(load_wav_corpus(dir.path) == ds);
  CHECK(load_data_source("wav:" + dir.path.string(), 99) == ds);

  // An 8000-sample clip gives the same features as its explicit zero padding.
  TempDir padded("padded");
  auto audio = clip(8000, 5);
  fs::create_directories(padded.path / "one");
  write_wav(padded.path / "one" / "a.wav", audio);
  fs::create_directories(padded.path / "two");
  write_wav(padded.path / "two" / "a.wav", fit_clip(audio));
  const Dataset pd = load_wav_corpus(padded.path);
  REQUIRE(pd.size() == 2);
  CHECK(pd.samples[0].features.bit_equal(pd.samples[1].features));
}

TEST_CASE("wav corpus errors") {
  CHECK_THROWS(load_wav_corpus("/nonexistent/sfl/corpus"));
  TempDir empty("empty");
  fs::create_directories(empty.path / "one");
  CHECK_THROWS(load_wav_corpus(empty.path));
  TempDir broken("broken");
  fs::create_directories(broken.path / "one");
  write_file(broken.path / "one" / "bad.wav", std::vector<std::uint8_t>(40, 'z'));
  CHECK_THROWS(load_wav_corpus(broken.path));
}

TEST_CASE("synthetic data is a pure function of its arguments") {
  for (auto d : {Difficulty::Easy, Difficulty::Hard}) {
    const Dataset a = synth_dataset(7, 20, d);
    CHECK(a == synth_dataset(7, 20, d));
    CHECK_FALSE(a == synth_dataset(8, 20, d));
    CHECK(a.size() == 140);
    for (auto c : a.class_counts()) CHECK(c == 20);
    for (const auto& s : a.samples) {
      CHECK(s.features.shape() == Shape{50, 13});
      CHECK(s.label < 7);
    }
  }
  CHECK_FALSE(synth_dataset(7, 20, Difficulty::Easy) == synth_dataset(7, 20, Difficulty::Hard));
  CHECK_THROWS_AS(synth_dataset(1, 0, Difficulty::Easy), std::invalid_argument);
}

TEST_CASE("easy synthetic data is separable by nearest centroid") {
  const Dataset train = synth_dataset(7, 50, Difficulty::Easy);
  std::vector<std::vector<double>> centroid(7, std::vector<double>(650, 0.0));
  for (const auto& s : train.samples)
    for (std::size_t i = 0; i < 650; ++i) centroid[s.label][i] += s.features[i] / 50.0;

  // A second draw from the same generator: same prototypes, fresh noise.
  Dataset held = synth_dataset(7, 100, Difficulty::Easy);
  std::size_t correct = 0, total = 0;
  auto counts = std::map<int, int>{};
  for (const auto& s : held.samples) {
    if (counts[s.label]++ < 50) continue;  // class 0 shares its first 50 draws with `train`
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t c = 0; c < 7; ++c) {
      double d = 0.0;
      for (std::size_t i = 0; i < 650; ++i) d += std::pow(s.features[i] - centroid[c][i], 2);
      if (d < best_d) best_d = d, best = c;
    }
    correct += best == s.label;
    ++total;
  }
  REQUIRE(total == 350);
  CHECK(double(correct) / double(total) > 0.95);
}

TEST_CASE("partition sizes, disjointness and coverage") {
  const Dataset ds = synth_dataset(3, 50, Difficulty::Easy);
  auto shards = partition(ds, 7, 11);
  REQUIRE(shards.size() == 7);
  for (const auto& s : shards) CHECK(s.size() == 50);

  Rng rng(12);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t per_class = 1 + rng.index(6);
    const Dataset small = synth_dataset(trial, per_class, Difficulty::Easy);
    const std::size_t m = 1 + rng.index(small.size());
    auto parts = partition(small, m, trial);
    REQUIRE(parts.size() == m);
    std::size_t lo = SIZE_MAX, hi = 0;
    Dataset joined;
    for (const auto& p : parts) {
      lo = std::min(lo, p.size());
      hi = std::max(hi, p.size());
      joined.samples.insert(joined.samples.end(), p.samples.begin(), p.samples.end());
    }
    CHECK(hi - lo <= 1);
    CHECK(multiset(joined) == multiset(small));
  }

  auto whole = partition(ds, 1, 4);
  REQUIRE(whole.size() == 1);
  CHECK(multiset(whole[0]) == multiset(ds));
  CHECK(partition(ds, 3, 5) == partition(ds, 3, 5));
  CHECK_THROWS_AS(partition(ds, ds.size() + 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(partition(ds, 0, 0), std::invalid_argument);
}

TEST_CASE("stratified train/validation split") {
  const Dataset ds = synth_dataset(5, 50, Difficulty::Easy);
  auto split = split_train_validation(ds, 0.1, 9);
  CHECK(split.validation.size() == 35);
  CHECK(split.train.size() == 315);
  for (auto c : split.validation.class_counts()) CHECK(c == 5);
  Dataset joined = split.train;
  joined.samples.insert(joined.samples.end(), split.validation.samples.begin(),
                        split.validation.samples.end());
  CHECK(multiset(joined) == multiset(ds));

  auto none = split_train_validation(ds, 0.0, 9);
  CHECK(none.validation.empty());
  CHECK(none.train.size() == ds.size());
  CHECK_THROWS_AS(split_train_validation(ds, 1.0, 9), std::invalid_argument);
}

TEST_CASE("epoch order is a seeded permutation") {
  auto a = epoch_order(100, 1, 0, 0);
  CHECK(a == epoch_order(100, 1, 0, 0));
  CHECK_FALSE(a == epoch_order(100, 1, 0, 1));
  CHECK_FALSE(a == epoch_order(100, 1, 1, 0));
  CHECK_FALSE(a == epoch_order(100, 2, 0, 0));
  std::sort(a.begin(), a.end());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == i);
  CHECK(epoch_order(0, 1, 0, 0).empty());
}

TEST_CASE("feature files") {
  const Dataset ds = synth_dataset(2, 3, Difficulty::Hard);
  auto bytes = encode_feature_file(ds);
  CHECK(bytes.size() == 4 + 4 + ds.size() * (1 + 650 * 4));
  Dataset back = decode_feature_file(bytes);
  CHECK(back.provenance == Provenance::FeatureFile);
  REQUIRE(back.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back.samples[i].label == ds.samples[i].label);
    CHECK(back.samples[i].features.bit_equal(ds.samples[i].features));
  }

  TempDir dir("features");
  write_feature_file(dir.path / "f.sflf", ds);
  CHECK(read_feature_file(dir.path / "f.sflf") == back);
  CHECK(load_data_source("features:" + (dir.path / "f.sflf").string(), 0) == back);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS(decode_feature_file(bad_magic));
  CHECK_THROWS(decode_feature_file(std::span(bytes).first(bytes.size() - 1)));
  auto bad_label = bytes;
  bad_label[8] = 7;
  CHECK_THROWS(decode_feature_file(bad_label));
}

TEST_CASE("data source strings") {
  CHECK(load_data_source("synth:easy:4", 3) == synth_dataset(3, 4, Difficulty::Easy));
  CHECK(load_data_source("synth:hard:2", 3) == synth_dataset(3, 2, Difficulty::Hard));
  CHECK(load_data_source("synth:easy", 3).size() == 350);
  CHECK_THROWS_AS(load_data_source("synth:medium", 0), std::invalid_argument);
  CHECK_THROWS_AS(load_data_source("synth:easy:x", 0), std::invalid_argument);
  CHECK_THROWS_AS(load_data_source("ftp:somewhere", 0), std::invalid_argument);
}
