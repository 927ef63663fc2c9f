#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "sfl/tensor.hpp"

namespace sfl {

/// Front-end parameters. Defaults produce a 50x13 map from one second of
/// 16 kHz audio.
struct MfccConfig {
  std::size_t sample_rate = 16000;
  std::size_t num_coefficients = 13;
  double frame_length = 0.02;  // seconds
  double frame_stride = 0.02;  // seconds
  std::size_t num_filters = 32;
  std::size_t fft_length = 256;
  std::size_t norm_window = 101;  // frames

  static constexpr double kLogFloor = 1e-12;
  static constexpr double kVarianceFloor = 1e-10;

  void validate() const;
  std::size_t frame_samples() const;
  std::size_t stride_samples() const;
  std::size_t spectrum_bins() const { return fft_length / 2 + 1; }
  /// Frames produced for `num_samples` input samples (0 if shorter than a
  /// frame). Trailing partial frames are dropped.
  std::size_t frame_count(std::size_t num_samples) const;
};

/// Coefficient matrix of shape [frames, coefficients].
struct FeatureMap {
  Tensor values;

  std::size_t frames() const { return values.dim(0); }
  std::size_t coefficients() const { return values.dim(1); }
};

/// Triangular mel filters, shape [num_filters, fft_length / 2 + 1]. Filter
/// edges are spaced evenly on mel(f) = 2595 log10(1 + f / 700) between 0 Hz
/// and Nyquist; weights are evaluated at each bin's centre frequency.
Tensor mel_filterbank(const MfccConfig& cfg);

/// Centre frequency (Hz) of every filter, in increasing order.
std::vector<double> mel_center_frequencies(const MfccConfig& cfg);

/// Cepstra before normalisation. Per frame: first fft_length samples of the
/// frame, Hamming window, |FFT|, mel filterbank, natural log with a floor of
/// 1e-12, orthonormal DCT-II, first num_coefficients outputs.
Tensor cepstra(std::span<const std::int16_t> audio, const MfccConfig& cfg);

/// Per-coefficient mean/variance normalisation over a centred window of
/// `window` frames, clipped at the signal edges.
Tensor sliding_normalize(const Tensor& cepstra, std::size_t window);

/// Full front-end: cepstra followed by sliding normalisation.
FeatureMap mfcc_extract(std::span<const std::int16_t> audio,
                        const MfccConfig& cfg = {});

}  // namespace sfl
