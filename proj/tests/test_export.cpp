#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <unistd.h>

#include "gradcheck.hpp"
#include "sfl/bytes.hpp"
#include "sfl/export.hpp"
#include "sfl/orchestrator.hpp"

using namespace sfl;

namespace {

constexpr ModelName kAll[] = {ModelName::Model1Mlp, ModelName::Model2Cnn, ModelName::Model3Cnn};

Checkpoint sample_checkpoint(ModelName name, std::uint64_t seed) {
  Checkpoint c;
  c.model = build(name, seed);
  c.config = {"sfl", "synth:easy", 3, 3, 0.0005f, 0.6f, seed, 0.1f, true};
  c.metrics = {0.93f, 0.21f, 945};
  return c;
}

FormatError::Kind format_error(auto&& fn) {
  try {
    fn();
  } catch (const FormatError& e) {
    return e.kind();
  }
  FAIL("no FormatError");
  return FormatError::Kind::Invalid;
}

// Model 1 trained briefly on easy data, with its validation set.
struct TrainedMlp {
  ModelSpec model;
  Dataset validation;
};

const TrainedMlp& trained_mlp() {
  static const TrainedMlp t = [] {
    const Dataset all = synth_dataset(7, 50, Difficulty::Easy);
    auto split = split_train_validation(all, 0.1, 7);
    TrainingConfig cfg;
    cfg.seed = 7;
    return TrainedMlp{centralized_train(cfg, split.train, {}).model, split.validation};
  }();
  return t;
}

}  // namespace

TEST_CASE("merge undoes split and runs bit-exactly") {
  Rng rng(1);
  for (auto name : kAll) {
    const ModelSpec spec = build(name, 3);
    const SplitModel halves = split(spec);
    const ModelSpec merged = merge(halves);
    CHECK(merged == spec);
    for (int i = 0; i < 10; ++i) {
      const Tensor x = model_input(spec, testing::random_tensor({50, 13}, rng));
      CHECK(infer(merged.layers, x).bit_equal(infer(halves.server, infer(halves.client, x))));
    }
  }
  SplitModel broken = split(build(ModelName::Model1Mlp));
  broken.server.front() = Layer::fully_connected(24, 7);
  CHECK_THROWS_AS(merge(broken), DimensionError);
}

TEST_CASE("merged model scores like the split pipeline") {
  const auto& t = trained_mlp();
  const SplitModel halves = split(t.model);
  std::size_t correct = 0;
  for (const auto& s : t.validation.samples)
    correct += argmax(infer(halves.server, infer(halves.client, model_input(t.model, s.features)))) ==
               s.label;
  CHECK(evaluate(merge(halves), t.validation) ==
        double(correct) / double(t.validation.size()));
}

TEST_CASE("quantising [-1, 1]") {
  const Tensor t({2}, std::vector<float>{-1.0f, 1.0f});
  const QuantizedTensor q = quantize_tensor(t);
  CHECK(q.scale == doctest::Approx(2.0 / 255.0).epsilon(1e-6));
  CHECK(q.scale >= 2.0f / 255.0f);
  // A zero point of -0.5 would put both ends on the grid; int8 forces -1,
  // which leaves 1.0 half a step above the top code.
  CHECK(q.zero_point == -1);
  CHECK(q.codes == std::vector<std::int8_t>{-128, 126});
  for (std::size_t i = 0; i < 2; ++i) CHECK(std::abs(q.dequantize(i) - t[i]) <= q.scale / 2.0);
}

TEST_CASE("an all-zero tensor is reconstructed exactly") {
  const QuantizedTensor q = quantize_tensor(Tensor({3, 4}));
  CHECK(q.scale == 1.0f);
  CHECK(q.zero_point == 0);
  for (auto c : q.codes) CHECK(c == q.zero_point);
  const Tensor back = q.dequantized();
  for (float v : back.values()) CHECK(v == 0.0f);
}

TEST_CASE("dequantisation error never exceeds half a step") {
  Rng rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    const float lo = rng.uniform(-5.0f, 5.0f);
    const float hi = lo + rng.uniform(0.0f, 3.0f) * (trial % 7 == 0 ? 1e-4f : 1.0f);
    Tensor t({1 + rng.index(200)});
    for (float& v : t.values()) v = rng.uniform(lo, hi);
    if (trial % 5 == 0) t[0] = 0.0f;
    const QuantizedTensor q = quantize_tensor(t);
    for (std::size_t i = 0; i < t.size(); ++i)
      REQUIRE(std::abs(q.dequantize(i) - double(t[i])) <= double(q.scale) / 2.0);
  }
  for (auto name : kAll) {
    const ModelSpec spec = build(name, 11);
    const QuantizedModel qm = quantize_int8(spec);
    REQUIRE(qm.layers.size() == spec.layers.size());
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
      const auto& layer = spec.layers[l];
      CHECK(qm.layers[l].kind == layer.kind);
      CHECK(qm.layers[l].dims == layer.dims);
      if (!layer.has_parameters()) continue;
      for (std::size_t i = 0; i < layer.weights.size(); ++i)
        REQUIRE(std::abs(qm.layers[l].weights.dequantize(i) - layer.weights[i]) <=
                qm.layers[l].weights.scale / 2.0);
    }
  }
}

TEST_CASE("non-finite weights are rejected") {
  for (float bad : {std::numeric_limits<float>::quiet_NaN(), std::numeric_limits<float>::infinity()}) {
    ModelSpec spec = build(ModelName::Model1Mlp, 1);
    spec.layers[0].weights[5] = bad;
    CHECK_THROWS_AS(quantize_int8(spec), std::domain_error);
  }
}

TEST_CASE("quantised inference stays within the propagated bound") {
  // Logit error of FC -> ReLU -> FC with perturbed weights W' = W + E,
  // |E| <= scale / 2 per tensor:
  //   |h' - h| <= sum_i |x_i| s1 / 2 + sb1 / 2                (ReLU is 1-Lipschitz)
  //   |y' - y| <= sum_k |W2'| |h' - h| + s2 / 2 sum_k |h_k| + sb2 / 2
  const ModelSpec spec = build(ModelName::Model1Mlp, 5);
  const QuantizedModel qm = quantize_int8(spec);
  const ModelSpec deq = dequantize(qm);
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor features = testing::random_tensor({50, 13}, rng, -2.0f, 2.0f);
    const Tensor x = model_input(spec, features);
    const Tensor h = infer(std::span(spec.layers).first(2), x);
    const Tensor y = infer(spec.layers, x);
    const Tensor yq = quantized_infer(qm, features);
    double sum_x = 0.0, sum_h = 0.0;
    for (float v : x.values()) sum_x += std::abs(v);
    for (float v : h.values()) sum_h += std::abs(v);
    const double eh = sum_x * qm.layers[0].weights.scale / 2.0 + qm.layers[0].bias.scale / 2.0;
    const auto& w2 = deq.layers[2].weights;
    for (std::size_t j = 0; j < 7; ++j) {
      double bound = sum_h * qm.layers[2].weights.scale / 2.0 + qm.layers[2].bias.scale / 2.0;
      for (std::size_t k = 0; k < 25; ++k) bound += std::abs(w2[j * 25 + k]) * eh;
      CHECK(std::abs(double(yq[j]) - double(y[j])) <= bound * (1.0 + 1e-4) + 1e-5);
    }
  }
  const Tensor f = testing::random_tensor({50, 13}, rng);
  CHECK(quantized_infer(qm, f).bit_equal(quantized_infer(decode_quantized(encode_quantized(qm)), f)));
  CHECK_THROWS_AS(quantized_infer(qm, Tensor({49, 13})), DimensionError);
}

TEST_CASE("quantised Model 1 keeps its accuracy") {
  const auto& t = trained_mlp();
  const QuantizedModel qm = quantize_int8(t.model);
  std::size_t agree = 0, correct = 0;
  for (const auto& s : t.validation.samples) {
    const auto q = argmax(quantized_infer(qm, s.features));
    agree += q == argmax(infer(t.model.layers, model_input(t.model, s.features)));
    correct += q == s.label;
  }
  const double n = double(t.validation.size());
  const double float_acc = evaluate(t.model, t.validation);
  CHECK(float_acc >= 0.9);
  CHECK(std::abs(double(correct) / n - float_acc) <= 0.02);
  CHECK(double(agree) / n >= 0.98);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  for (auto name : kAll) {
    const Checkpoint c = sample_checkpoint(name, 4);
    const auto bytes = encode_checkpoint(c);
    const Checkpoint back = decode_checkpoint(bytes);
    CHECK(back == c);
    for (std::size_t l = 0; l < c.model.layers.size(); ++l)
      CHECK(back.model.layers[l].weights.bit_equal(c.model.layers[l].weights));
  }
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Checkpoint c = sample_checkpoint(ModelName::Model1Mlp, trial);
    for (auto& layer : c.model.layers)
      for (float& v : layer.bias.values()) v = rng.normal();
    c.config.data_source = std::string(rng.index(300), 'd');
    CHECK(decode_checkpoint(encode_checkpoint(c)) == c);
  }
}

TEST_CASE("quantised file round trip is code-exact") {
  for (auto name : kAll) {
    const QuantizedModel q = quantize_int8(build(name, 6));
    CHECK(decode_quantized(encode_quantized(q)) == q);
  }
}

TEST_CASE("file sizes for Model 1") {
  const Checkpoint c = sample_checkpoint(ModelName::Model1Mlp, 1);
  const std::size_t header = 4 + 2 + (1 + 10) + 2 + 2;
  const std::size_t layer_header = 1 + 4 * 4;
  const std::size_t fc1 = (1 + 2 * 4 + 650 * 25 * 4) + (1 + 4 + 25 * 4);
  const std::size_t fc2 = (1 + 2 * 4 + 25 * 7 * 4) + (1 + 4 + 7 * 4);
  const std::size_t config = (2 + 3) + (2 + 10) + 2 + 4 + 4 + 4 + 8 + 4 + 1;
  const std::size_t metrics = 4 + 4 + 4;
  CHECK(encode_checkpoint(c).size() ==
        header + 3 * layer_header + fc1 + fc2 + config + metrics + 4);
  CHECK(encode_checkpoint(c).size() == 65988);

  const std::size_t qfc1 = (1 + 8 + 4 + 1 + 16250) + (1 + 4 + 4 + 1 + 25);
  const std::size_t qfc2 = (1 + 8 + 4 + 1 + 175) + (1 + 4 + 4 + 1 + 7);
  CHECK(encode_quantized(quantize_int8(c.model)).size() ==
        header + 3 * layer_header + qfc1 + qfc2 + 4);
}

TEST_CASE("corrupt files raise structured errors") {
  using K = FormatError::Kind;
  const auto good = encode_checkpoint(sample_checkpoint(ModelName::Model1Mlp, 2));
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    auto bad = good;
    bad[4 + rng.index(bad.size() - 4)] ^= static_cast<std::uint8_t>(1 + rng.index(255));
    CHECK(format_error([&] { decode_checkpoint(bad); }) == K::BadChecksum);
  }
  auto magic = good;
  magic[1] = 'X';
  CHECK(format_error([&] { decode_checkpoint(magic); }) == K::BadMagic);
  CHECK(format_error([&] { decode_checkpoint(std::span(good).first(100)); }) == K::BadChecksum);
  CHECK(format_error([&] { decode_checkpoint(std::span(good).first(3)); }) == K::Truncated);

  auto reseal = [](std::vector<std::uint8_t> f) {
    f.resize(f.size() - 4);
    const auto crc = crc32(f);
    for (int i = 0; i < 4; ++i) f.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
    return f;
  };
  auto version = good;
  version[4] = 9;
  CHECK(format_error([&] { decode_checkpoint(reseal(version)); }) == K::BadVersion);
  auto cut = std::vector<std::uint8_t>(good.begin(), good.begin() + 30);  // inside a layer header
  cut.insert(cut.end(), 4, 0);
  CHECK(format_error([&] { decode_checkpoint(reseal(cut)); }) == K::Truncated);
  auto trailing = good;
  trailing.insert(trailing.end() - 4, 0);
  CHECK(format_error([&] { decode_checkpoint(reseal(trailing)); }) == K::Invalid);
  auto other_name = good;
  other_name[7 + 5] = '2';  // "model2_mlp"
  CHECK(format_error([&] { decode_checkpoint(reseal(other_name)); }) == K::Invalid);

  const auto qgood = encode_quantized(quantize_int8(build(ModelName::Model1Mlp, 2)));
  auto qbad = qgood;
  qbad[qbad.size() / 2] ^= 0x40;
  CHECK(format_error([&] { decode_quantized(qbad); }) == K::BadChecksum);
  CHECK(format_error([&] { decode_checkpoint(qgood); }) == K::BadMagic);
}

TEST_CASE("save and load through files") {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("sfl_export_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  const Checkpoint c = sample_checkpoint(ModelName::Model2Cnn, 3);
  save_checkpoint(dir / "m.sflc", c);
  CHECK(load_checkpoint(dir / "m.sflc") == c);
  const QuantizedModel q = quantize_int8(c.model);
  save_quantized(dir / "m.sflq", q);
  CHECK(load_quantized(dir / "m.sflq") == q);
  CHECK(load_quantized(dir / "m.sflq") == load_quantized(dir / "m.sflq"));
  CHECK_THROWS(load_checkpoint(dir / "missing.sflc"));
  std::filesystem::remove_all(dir);
}
