#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "ccau/schema.hpp"

namespace ccau::schema {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

// iterative radix-2 FFT, n must be a power of two
void fft(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0);
      for (size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// triangular mel filterbank over FFT bins, n_mels x (nfft/2 + 1)
std::vector<double> mel_filterbank(int64_t n_mels, size_t nfft, double sample_rate, double f_min,
                                   double f_max) {
  const size_t n_bins = nfft / 2 + 1;
  std::vector<double> fb(static_cast<size_t>(n_mels) * n_bins, 0.0);
  const double mel_lo = hz_to_mel(f_min);
  const double mel_hi = hz_to_mel(f_max);
  std::vector<double> hz_pts(static_cast<size_t>(n_mels) + 2);
  for (size_t i = 0; i < hz_pts.size(); ++i)
    hz_pts[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                       static_cast<double>(n_mels + 1));
  for (int64_t m = 0; m < n_mels; ++m) {
    const double left = hz_pts[static_cast<size_t>(m)];
    const double center = hz_pts[static_cast<size_t>(m) + 1];
    const double right = hz_pts[static_cast<size_t>(m) + 2];
    for (size_t b = 0; b < n_bins; ++b) {
      const double hz = static_cast<double>(b) * sample_rate / static_cast<double>(nfft);
      double w = 0.0;
      if (hz > left && hz < center)
        w = (hz - left) / (center - left);
      else if (hz >= center && hz < right)
        w = (right - hz) / (right - center);
      fb[static_cast<size_t>(m) * n_bins + b] = w;
    }
  }
  return fb;
}

}  // namespace

Spectrogram log_mel_spectrogram(const std::vector<double>& waveform, double sample_rate,
                                const LogMelParams& params) {
  if (sample_rate <= 0) throw std::invalid_argument("log_mel_spectrogram: sample_rate <= 0");
  const int64_t win = std::max<int64_t>(2, std::llround(params.window_sec * sample_rate));
  const int64_t hop = std::max<int64_t>(1, std::llround(params.hop_sec * sample_rate));
  if (static_cast<int64_t>(waveform.size()) < win)
    throw std::invalid_argument("log_mel_spectrogram: waveform shorter than one window");

  const size_t nfft = next_pow2(static_cast<size_t>(win));
  const size_t n_bins = nfft / 2 + 1;
  const double f_max = params.f_max > 0 ? params.f_max : sample_rate / 2.0;
  const auto fb = mel_filterbank(params.n_mels, nfft, sample_rate, params.f_min, f_max);

  std::vector<double> hann(static_cast<size_t>(win));
  for (int64_t i = 0; i < win; ++i)
    hann[static_cast<size_t>(i)] =
        0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(win - 1));

  const int64_t n_frames = (static_cast<int64_t>(waveform.size()) - win) / hop + 1;

  Spectrogram spec;
  spec.frames = n_frames;
  spec.mels = params.n_mels;
  spec.values.resize(static_cast<size_t>(n_frames * params.n_mels));

  std::vector<std::complex<double>> buf(nfft);
  std::vector<double> power(n_bins);
  for (int64_t t = 0; t < n_frames; ++t) {
    const double* w = waveform.data() + t * hop;
    for (size_t i = 0; i < nfft; ++i)
      buf[i] = i < static_cast<size_t>(win) ? std::complex<double>(w[i] * hann[i], 0.0)
                                            : std::complex<double>(0.0, 0.0);
    fft(buf);
    for (size_t b = 0; b < n_bins; ++b) power[b] = std::norm(buf[b]);
    for (int64_t m = 0; m < params.n_mels; ++m) {
      double e = 0.0;
      const double* f = fb.data() + static_cast<size_t>(m) * n_bins;
      for (size_t b = 0; b < n_bins; ++b) e += f[b] * power[b];
      spec.values[static_cast<size_t>(t * params.n_mels + m)] = std::log(e + params.floor_eps);
    }
  }

  if (params.target_frames > 0 && spec.frames != params.target_frames) {
    // fixed-length temporal crop: center-crop long spectrograms, loop-pad short ones
    Spectrogram out;
    out.frames = params.target_frames;
    out.mels = spec.mels;
    out.values.resize(static_cast<size_t>(out.frames * out.mels));
    if (spec.frames >= params.target_frames) {
      const int64_t off = (spec.frames - params.target_frames) / 2;
      std::copy_n(spec.values.begin() + off * spec.mels, out.frames * out.mels,
                  out.values.begin());
    } else {
      for (int64_t t = 0; t < out.frames; ++t) {
        const int64_t src = t % spec.frames;
        std::copy_n(spec.values.begin() + src * spec.mels, spec.mels,
                    out.values.begin() + t * out.mels);
      }
    }
    return out;
  }
  return spec;
}

}  // namespace ccau::schema
