#pragma once

#include <complex>
#include <string>
#include <vector>

#include "tensor.hpp"
#include "util.hpp"

namespace mem::dsp {

// A fixed-duration multi-channel window of raw samples (microvolts),
// channel-major: samples is N x L.
struct RawEegSegment {
  std::vector<std::string> channel_names;
  double sampling_rate_hz = 500.0;
  nn::Array samples;

  int channels() const { return samples.rows(); }
  int length() const { return samples.cols(); }
};

// Per-channel power spectral density restricted to the retained band.
struct Spectrogram {
  nn::Array psd;  // N x d, µV²/Hz until reference_applied
  std::vector<double> bin_freqs_hz;
  bool reference_applied = false;

  int channels() const { return psd.rows(); }
  int bins() const { return psd.cols(); }
};

struct WelchConfig {
  int segment_len = 125;
  int overlap = 62;
  int fft_len = 512;
  std::string window = "hann";
  double f_lo_hz = 3.0;
  double f_hi_hz = 20.0;

  void validate(double sampling_rate_hz) const;
  // Band edges land on the nearest FFT bin; both edges retained. The default
  // grid (500 Hz, 512-point FFT, 3-20 Hz) keeps bins 3..20 -> 18 bins.
  int lo_bin(double sampling_rate_hz) const;
  int hi_bin(double sampling_rate_hz) const;
  int retained_bins(double sampling_rate_hz) const;
  std::vector<double> bin_grid(double sampling_rate_hz) const;
};

bool is_power_of_two(int n);

std::vector<double> hann_window(int n);

// In-place forward FFT; length must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& a);

// One-sided power spectrum of a real input: |X_k|^2 for k=0..n/2, doubled for
// 0 < k < n/2 so total power is preserved.
std::vector<double> fft_power(const std::vector<double>& x);

// Per channel: overlapping segments, per-segment mean removal, Hann taper,
// zero-padded FFT, density scaling 1/(f_s * sum(w^2)), average across
// segments, then band selection.
Spectrogram welch_psd(const RawEegSegment& seg, const WelchConfig& cfg);

// Elementwise log10(w+eps) - log10(ref+eps); marks the result as normalized.
Spectrogram apply_reference(const Spectrogram& w, const Spectrogram& ref);

inline constexpr double kLogFloor = 1e-12;

}  // namespace mem::dsp
