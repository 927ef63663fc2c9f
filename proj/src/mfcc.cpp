#include "sfl/mfcc.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <fftw3.h>

namespace sfl {
namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

// Real-input DFT of fixed length backed by FFTW. Planning is not
// thread-safe in FFTW, execution is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(std::size_t n)
      : in_(fftw_alloc_real(n)), out_(fftw_alloc_complex(n / 2 + 1)) {
    if (!in_ || !out_) throw std::bad_alloc();
    std::lock_guard lock(planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard lock(planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  void execute() { fftw_execute(plan_); }
  double magnitude(std::size_t k) const { return std::hypot(out_[k][0], out_[k][1]); }

 private:
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_;
};

std::vector<double> filter_edges_hz(const MfccConfig& cfg) {
  const double top = hz_to_mel(static_cast<double>(cfg.sample_rate) / 2.0);
  std::vector<double> edges(cfg.num_filters + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(top * double(i) / double(cfg.num_filters + 1));
  return edges;
}

std::vector<double> filterbank_weights(const MfccConfig& cfg) {
  const auto edges = filter_edges_hz(cfg);
  const std::size_t bins = cfg.spectrum_bins();
  std::vector<double> fb(cfg.num_filters * bins, 0.0);
  for (std::size_t m = 0; m < cfg.num_filters; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = double(k) * double(cfg.sample_rate) /
                       double(cfg.fft_length);
      const double w = std::min((f - lo) / (mid - lo), (hi - f) / (hi - mid));
      fb[m * bins + k] = std::max(0.0, w);
    }
  }
  return fb;
}

}  // namespace

void MfccConfig::validate() const {
  if (fft_length < 2 || fft_length > (std::size_t{1} << 20))
    throw std::invalid_argument("fft_length must be in [2, 2^20]");
  if (num_coefficients == 0 || num_coefficients > num_filters)
    throw std::invalid_argument(
        "num_coefficients must be in [1, num_filters]");
  if (!(frame_length > 0.0) || !(frame_stride > 0.0))
    throw std::invalid_argument("frame length and stride must be positive");
  if (sample_rate == 0 || norm_window == 0)
    throw std::invalid_argument("sample_rate and norm_window must be positive");
  if (frame_samples() == 0 || stride_samples() == 0)
    throw std::invalid_argument("frame shorter than one sample");
}

std::size_t MfccConfig::frame_samples() const {
  return static_cast<std::size_t>(std::lround(frame_length * double(sample_rate)));
}

std::size_t MfccConfig::stride_samples() const {
  return static_cast<std::size_t>(std::lround(frame_stride * double(sample_rate)));
}

std::size_t MfccConfig::frame_count(std::size_t num_samples) const {
  if (num_samples < frame_samples()) return 0;
  return (num_samples - frame_samples()) / stride_samples() + 1;
}

Tensor mel_filterbank(const MfccConfig& cfg) {
  cfg.validate();
  auto fb = filterbank_weights(cfg);
  std::vector<float> values(fb.begin(), fb.end());
  return Tensor({cfg.num_filters, cfg.spectrum_bins()}, std::move(values));
}

std::vector<double> mel_center_frequencies(const MfccConfig& cfg) {
  cfg.validate();
  auto edges = filter_edges_hz(cfg);
  return {edges.begin() + 1, edges.end() - 1};
}

namespace {

struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;
};

Matrix cepstra_matrix(std::span<const std::int16_t> audio,
                      const MfccConfig& cfg) {
  cfg.validate();
  if (audio.empty()) throw std::invalid_argument("mfcc: empty audio");
  const std::size_t frames = cfg.frame_count(audio.size());
  if (frames == 0)
    throw std::invalid_argument(
        "mfcc: audio of " + std::to_string(audio.size()) +
        " samples is shorter than one frame (" +
        std::to_string(cfg.frame_samples()) + " samples)");

  const std::size_t n_fft = cfg.fft_length;
  const std::size_t used = std::min(cfg.frame_samples(), n_fft);
  const std::size_t bins = cfg.spectrum_bins();
  const std::size_t n_mel = cfg.num_filters;
  const std::size_t n_cep = cfg.num_coefficients;

  std::vector<double> window(used);
  for (std::size_t i = 0; i < used; ++i)
    window[i] = used > 1 ? 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi *
                                                  double(i) / double(used - 1))
                         : 1.0;
  const auto fb = filterbank_weights(cfg);

  // Orthonormal DCT-II rows for the retained coefficients.
  std::vector<double> dct(n_cep * n_mel);
  for (std::size_t c = 0; c < n_cep; ++c) {
    const double scale = std::sqrt((c == 0 ? 1.0 : 2.0) / double(n_mel));
    for (std::size_t m = 0; m < n_mel; ++m)
      dct[c * n_mel + m] =
          scale * std::cos(std::numbers::pi * double(c) * (double(m) + 0.5) /
                           double(n_mel));
  }

  Matrix out{frames, n_cep, std::vector<double>(frames * n_cep)};
  RealFft fft(n_fft);
  double* buf = fft.input();
  std::vector<double> magnitude(bins), log_mel(n_mel);
  for (std::size_t t = 0; t < frames; ++t) {
    const std::int16_t* frame = audio.data() + t * cfg.stride_samples();
    std::fill(buf, buf + n_fft, 0.0);
    for (std::size_t i = 0; i < used; ++i)
      buf[i] = double(frame[i]) / 32768.0 * window[i];
    fft.execute();
    for (std::size_t k = 0; k < bins; ++k) magnitude[k] = fft.magnitude(k);
    for (std::size_t m = 0; m < n_mel; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) e += fb[m * bins + k] * magnitude[k];
      log_mel[m] = std::log(std::max(e, MfccConfig::kLogFloor));
    }
    for (std::size_t c = 0; c < n_cep; ++c) {
      double acc = 0.0;
      for (std::size_t m = 0; m < n_mel; ++m) acc += dct[c * n_mel + m] * log_mel[m];
      out.v[t * n_cep + c] = acc;
    }
  }
  return out;
}

Matrix normalize_matrix(const Matrix& m, std::size_t window) {
  if (window == 0) throw std::invalid_argument("normalisation window is zero");
  const std::size_t frames = m.rows, n = m.cols;
  const std::size_t half = (window - 1) / 2;
  const auto& cep = m.v;
  Matrix out{frames, n, std::vector<double>(frames * n)};
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t lo = t > half ? t - half : 0;
    const std::size_t hi = std::min(frames, t + (window - 1 - half) + 1);
    const double count = double(hi - lo);
    for (std::size_t c = 0; c < n; ++c) {
      double mean = 0.0;
      for (std::size_t s = lo; s < hi; ++s) mean += cep[s * n + c];
      mean /= count;
      double var = 0.0;
      for (std::size_t s = lo; s < hi; ++s) {
        const double d = cep[s * n + c] - mean;
        var += d * d;
      }
      var = std::max(var / count, MfccConfig::kVarianceFloor);
      out.v[t * n + c] = (cep[t * n + c] - mean) / std::sqrt(var);
    }
  }
  return out;
}

Tensor to_tensor(const Matrix& m) {
  return Tensor({m.rows, m.cols}, std::vector<float>(m.v.begin(), m.v.end()));
}

}  // namespace

Tensor cepstra(std::span<const std::int16_t> audio, const MfccConfig& cfg) {
  return to_tensor(cepstra_matrix(audio, cfg));
}

Tensor sliding_normalize(const Tensor& cep, std::size_t window) {
  if (cep.rank() != 2)
    throw DimensionError("sliding_normalize expects [frames, coefficients]");
  Matrix m{cep.dim(0), cep.dim(1),
           std::vector<double>(cep.values().begin(), cep.values().end())};
  return to_tensor(normalize_matrix(m, window));
}

FeatureMap mfcc_extract(std::span<const std::int16_t> audio,
                        const MfccConfig& cfg) {
  // Normalisation runs on the double-precision cepstra: near-constant
  // coefficients have tiny variances that would amplify float rounding.
  return FeatureMap{
      to_tensor(normalize_matrix(cepstra_matrix(audio, cfg), cfg.norm_window))};
}

}  // namespace sfl
