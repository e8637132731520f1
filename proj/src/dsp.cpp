#include "dsp.hpp"

#include <cmath>

namespace mem::dsp {

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

void WelchConfig::validate(double sampling_rate_hz) const {
  if (sampling_rate_hz <= 0) throw ConfigError("welch: sampling rate must be positive");
  if (segment_len <= 0) throw ConfigError("welch: segment_len must be positive");
  if (overlap < 0 || overlap >= segment_len)
    throw ConfigError("welch: overlap must satisfy 0 <= overlap < segment_len");
  if (fft_len < segment_len) throw ConfigError("welch: fft_len must be >= segment_len");
  if (!is_power_of_two(fft_len)) throw ConfigError("welch: fft_len must be a power of two");
  if (window != "hann") throw ConfigError("welch: unsupported window '" + window + "'");
  if (!(f_lo_hz >= 0) || !(f_lo_hz < f_hi_hz) || !(f_hi_hz <= sampling_rate_hz / 2))
    throw ConfigError("welch: need 0 <= f_lo < f_hi <= f_s/2");
}

int WelchConfig::lo_bin(double sampling_rate_hz) const {
  return static_cast<int>(std::lround(f_lo_hz * fft_len / sampling_rate_hz));
}

int WelchConfig::hi_bin(double sampling_rate_hz) const {
  return static_cast<int>(std::lround(f_hi_hz * fft_len / sampling_rate_hz));
}

int WelchConfig::retained_bins(double sampling_rate_hz) const {
  return hi_bin(sampling_rate_hz) - lo_bin(sampling_rate_hz) + 1;
}

std::vector<double> WelchConfig::bin_grid(double sampling_rate_hz) const {
  std::vector<double> freqs;
  for (int k = lo_bin(sampling_rate_hz); k <= hi_bin(sampling_rate_hz); ++k)
    freqs.push_back(k * sampling_rate_hz / fft_len);
  return freqs;
}

std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<size_t>(n), 1.0);
  if (n <= 1) return w;
  const double pi = std::acos(-1.0);
  for (int i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * pi * static_cast<double>(i) / (n - 1));
  return w;
}

void fft_inplace(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw ConfigError("fft: length must be a power of two");
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const double pi = std::acos(-1.0);
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * pi / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

std::vector<double> fft_power(const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  if (!is_power_of_two(n)) throw ConfigError("fft_power: length must be a power of two");
  std::vector<std::complex<double>> buf(x.begin(), x.end());
  fft_inplace(buf);
  std::vector<double> p(static_cast<size_t>(n / 2 + 1));
  for (int k = 0; k <= n / 2; ++k) {
    double mag2 = std::norm(buf[k]);
    if (k != 0 && k != n / 2) mag2 *= 2.0;
    p[k] = mag2;
  }
  return p;
}

Spectrogram welch_psd(const RawEegSegment& seg, const WelchConfig& cfg) {
  const double fs = seg.sampling_rate_hz;
  cfg.validate(fs);
  const int n_ch = seg.channels();
  const int len = seg.length();
  if (n_ch <= 0) throw ShapeError("welch: segment has no channels");
  if (!seg.channel_names.empty() && static_cast<int>(seg.channel_names.size()) != n_ch)
    throw ShapeError("welch: channel_names count disagrees with sample rows");
  if (len < cfg.segment_len)
    throw ShapeError("welch: input shorter than one segment (" + std::to_string(len) + " < " +
                     std::to_string(cfg.segment_len) + ")");

  const std::vector<double> win = hann_window(cfg.segment_len);
  double window_energy = 0.0;
  for (double w : win) window_energy += w * w;
  const double scale = 1.0 / (fs * window_energy);

  const int step = cfg.segment_len - cfg.overlap;
  const int n_freq = cfg.fft_len / 2 + 1;
  const int lo = cfg.lo_bin(fs);
  const int hi = cfg.hi_bin(fs);

  Spectrogram out;
  out.psd = nn::Array({n_ch, hi - lo + 1});
  out.bin_freqs_hz = cfg.bin_grid(fs);

  std::vector<double> acc(static_cast<size_t>(n_freq));
  std::vector<double> padded(static_cast<size_t>(cfg.fft_len));
  for (int ch = 0; ch < n_ch; ++ch) {
    std::fill(acc.begin(), acc.end(), 0.0);
    int n_segments = 0;
    for (int start = 0; start + cfg.segment_len <= len; start += step) {
      double mean = 0.0;
      for (int i = 0; i < cfg.segment_len; ++i) mean += seg.samples.at(ch, start + i);
      mean /= cfg.segment_len;
      std::fill(padded.begin(), padded.end(), 0.0);
      for (int i = 0; i < cfg.segment_len; ++i)
        padded[i] = (seg.samples.at(ch, start + i) - mean) * win[i];
      const std::vector<double> p = fft_power(padded);
      for (int k = 0; k < n_freq; ++k) acc[k] += p[k] * scale;
      ++n_segments;
    }
    for (int k = lo; k <= hi; ++k) out.psd.at(ch, k - lo) = acc[k] / n_segments;
  }
  return out;
}

Spectrogram apply_reference(const Spectrogram& w, const Spectrogram& ref) {
  if (!w.psd.same_shape(ref.psd))
    throw ShapeError("apply_reference: spectrogram shapes disagree");
  if (w.bin_freqs_hz != ref.bin_freqs_hz)
    throw ShapeError("apply_reference: bin grids disagree");
  Spectrogram out = w;
  for (size_t i = 0; i < out.psd.data.size(); ++i)
    out.psd.data[i] =
        std::log10(w.psd.data[i] + kLogFloor) - std::log10(ref.psd.data[i] + kLogFloor);
  out.reference_applied = true;
  return out;
}

}  // namespace mem::dsp
