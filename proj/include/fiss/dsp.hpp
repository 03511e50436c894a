// Copyright 2026 The fiss authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FISS_DSP_HPP
#define FISS_DSP_HPP

#include "fiss/audio.hpp"
#include "fiss/common.hpp"

#include <complex>
#include <vector>

namespace fiss {

using CMat = Eigen::MatrixXcd;

enum class Window { kHann, kRect };

struct FramingInfo {
  int win_length = 4096;
  int hop_length = 1024;
  int sample_rate = kSampleRate;
  Window window = Window::kHann;

  int n_bins() const { return win_length / 2 + 1; }
  double frame_period_s() const { return static_cast<double>(hop_length) / sample_rate; }
};

// Complex STFT of a single channel, frames as rows: [T_s x F].
struct ComplexSpectrogram {
  CMat values;
  FramingInfo framing;

  long frames() const { return values.rows(); }
  long bins() const { return values.cols(); }
};

// Non-negative magnitude array with the same framing metadata.
struct Spectrogram {
  Mat values;
  FramingInfo framing;

  long frames() const { return values.rows(); }
  long bins() const { return values.cols(); }
};

// ---------------------------------------------------------------------------
// Radix-2 FFT, iterative, in place. win_length is constrained to powers of
// two so nothing fancier is needed.
// ---------------------------------------------------------------------------

namespace fft_detail {

inline bool is_pow2(long n) { return n > 0 && (n & (n - 1)) == 0; }

inline void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  if (!is_pow2(static_cast<long>(n))) throw framing_error("FFT size must be a power of two");

  // bit reversal permutation
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }

  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    const double inv_n = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= inv_n;
  }
}

inline std::vector<double> make_window(Window w, int n) {
  std::vector<double> win(static_cast<std::size_t>(n), 1.0);
  if (w == Window::kHann) {
    // periodic Hann: exact constant overlap-add at hop = n/4 and n/2
    for (int i = 0; i < n; ++i)
      win[static_cast<std::size_t>(i)] =
          0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / n);
  }
  return win;
}

// Centered analysis: reflect-pad by win/2 on each side (librosa convention,
// edge sample not repeated).
inline Vec reflect_pad(const Eigen::Ref<const Eigen::RowVectorXd>& x, long pad) {
  const long n = x.size();
  if (n <= pad) throw framing_error("signal shorter than one window after padding: need > " +
                                    std::to_string(pad) + " samples, got " + std::to_string(n));
  Vec out(n + 2 * pad);
  for (long i = 0; i < pad; ++i) out[i] = x[pad - i];
  for (long i = 0; i < n; ++i) out[pad + i] = x[i];
  for (long i = 0; i < pad; ++i) out[pad + n + i] = x[n - 2 - i];
  return out;
}

}  // namespace fft_detail

inline long stft_frame_count(long n_samples, int win_length, int hop_length) {
  const long pad = win_length / 2;
  return (n_samples + 2 * pad - win_length) / hop_length + 1;
}

// STFT of one channel. Frames are centered with reflect padding.
inline ComplexSpectrogram stft_channel(const Eigen::Ref<const Eigen::RowVectorXd>& x,
                                       const FramingInfo& framing) {
  if (!fft_detail::is_pow2(framing.win_length))
    throw framing_error("win_length must be a power of two");
  if (framing.hop_length <= 0 || framing.hop_length > framing.win_length)
    throw framing_error("hop_length must be in [1, win_length]");

  const int win = framing.win_length;
  const int hop = framing.hop_length;
  const long pad = win / 2;
  const Vec padded = fft_detail::reflect_pad(x, pad);
  const long frames = (padded.size() - win) / hop + 1;
  if (frames < 1) throw framing_error("signal shorter than one window after padding");

  const std::vector<double> w = fft_detail::make_window(framing.window, win);
  const int n_bins = framing.win_length / 2 + 1;

  ComplexSpectrogram spec;
  spec.framing = framing;
  spec.values.resize(frames, n_bins);

  std::vector<std::complex<double>> buf(static_cast<std::size_t>(win));
  for (long t = 0; t < frames; ++t) {
    const long off = t * hop;
    for (int i = 0; i < win; ++i)
      buf[static_cast<std::size_t>(i)] = padded[off + i] * w[static_cast<std::size_t>(i)];
    fft_detail::fft_inplace(buf, false);
    for (int k = 0; k < n_bins; ++k) spec.values(t, k) = buf[static_cast<std::size_t>(k)];
  }
  return spec;
}

inline std::vector<ComplexSpectrogram> stft(const AudioClip& clip, int win_length = 4096,
                                            int hop_length = 1024,
                                            Window window = Window::kHann) {
  clip.validate();
  FramingInfo framing{win_length, hop_length, clip.sample_rate, window};
  std::vector<ComplexSpectrogram> out;
  out.reserve(static_cast<std::size_t>(clip.channels()));
  for (int c = 0; c < clip.channels(); ++c) out.push_back(stft_channel(clip.samples.row(c), framing));
  return out;
}

// Weighted overlap-add inverse. Exact for any window satisfying the
// constant-overlap-add condition at the given hop; a vanishing synthesis
// denominator inside the reconstructed interval is rejected.
inline Vec istft_channel(const ComplexSpectrogram& spec, long n_samples) {
  const int win = spec.framing.win_length;
  const int hop = spec.framing.hop_length;
  if (hop <= 0 || hop > win) throw framing_error("istft: hop_length must be in [1, win_length]");
  if (spec.bins() != win / 2 + 1)
    throw framing_error("istft: bin count inconsistent with win_length");

  const long pad = win / 2;
  const long total = (spec.frames() - 1) * static_cast<long>(hop) + win;
  if (n_samples + pad > total)
    throw framing_error("istft: spectrogram too short for requested sample count");

  const std::vector<double> w = fft_detail::make_window(spec.framing.window, win);
  Vec acc = Vec::Zero(total);
  Vec den = Vec::Zero(total);

  std::vector<std::complex<double>> buf(static_cast<std::size_t>(win));
  for (long t = 0; t < spec.frames(); ++t) {
    for (int k = 0; k <= win / 2; ++k) buf[static_cast<std::size_t>(k)] = spec.values(t, k);
    for (int k = win / 2 + 1; k < win; ++k)
      buf[static_cast<std::size_t>(k)] = std::conj(spec.values(t, win - k));
    fft_detail::fft_inplace(buf, true);
    const long off = t * hop;
    for (int i = 0; i < win; ++i) {
      const double wi = w[static_cast<std::size_t>(i)];
      acc[off + i] += wi * buf[static_cast<std::size_t>(i)].real();
      den[off + i] += wi * wi;
    }
  }

  Vec out(n_samples);
  for (long i = 0; i < n_samples; ++i) {
    const double d = den[pad + i];
    if (d < 1e-8) throw framing_error("istft: window/hop violate overlap-add at sample " +
                                      std::to_string(i));
    out[i] = acc[pad + i] / d;
  }
  return out;
}

inline AudioClip istft(const std::vector<ComplexSpectrogram>& channels, long n_samples) {
  if (channels.empty()) throw shape_error("istft: no channels");
  AudioClip clip;
  clip.sample_rate = channels[0].framing.sample_rate;
  clip.samples.resize(static_cast<long>(channels.size()), n_samples);
  for (std::size_t c = 0; c < channels.size(); ++c)
    clip.samples.row(static_cast<long>(c)) = istft_channel(channels[c], n_samples).transpose();
  return clip;
}

inline Spectrogram magnitude(const ComplexSpectrogram& spec) {
  Spectrogram mag;
  mag.framing = spec.framing;
  mag.values = spec.values.cwiseAbs();
  return mag;
}

// Mask-based reconstruction: keeps the mixture phase, scales the magnitude.
inline ComplexSpectrogram mask_apply(const Mat& mask, const ComplexSpectrogram& mixture) {
  if (mask.rows() != mixture.values.rows() || mask.cols() != mixture.values.cols())
    throw shape_error("mask_apply: mask shape " + std::to_string(mask.rows()) + "x" +
                      std::to_string(mask.cols()) + " does not match mixture " +
                      std::to_string(mixture.values.rows()) + "x" +
                      std::to_string(mixture.values.cols()));
  ComplexSpectrogram out;
  out.framing = mixture.framing;
  out.values = mixture.values.cwiseProduct(mask.cast<std::complex<double>>());
  return out;
}

// ---------------------------------------------------------------------------
// Mel filter bank (HTK-style triangles). Feeds the pseudo-VGGish extractor.
// ---------------------------------------------------------------------------

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

inline Mat mel_matrix(int n_bins, int n_mels, int sample_rate, double fmin = 125.0,
                      double fmax = 7500.0) {
  if (n_mels >= n_bins) throw config_error("mel_matrix: n_mels must be < n_bins");
  if (fmax > sample_rate / 2.0) fmax = sample_rate / 2.0;

  const int win = 2 * (n_bins - 1);
  const double mel_lo = hz_to_mel(fmin);
  const double mel_hi = hz_to_mel(fmax);

  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (int m = 0; m < n_mels + 2; ++m)
    edges[static_cast<std::size_t>(m)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * m / static_cast<double>(n_mels + 1));

  Mat fb = Mat::Zero(n_mels, n_bins);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double mid = edges[static_cast<std::size_t>(m) + 1];
    const double hi = edges[static_cast<std::size_t>(m) + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / win;
      if (f > lo && f < hi) {
        fb(m, k) = (f <= mid) ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
      }
    }
    // guarantee each filter sees at least one bin even if triangles are
    // narrower than the bin spacing
    if (fb.row(m).sum() <= 0.0) {
      int k_mid = static_cast<int>(std::lround(mid * win / sample_rate));
      k_mid = std::min(std::max(k_mid, 0), n_bins - 1);
      fb(m, k_mid) = 1.0;
    }
  }
  return fb;
}

// Reconstruction SNR in dB of an estimate against a reference.
inline double snr_db(const Vec& reference, const Vec& estimate) {
  const double sig = reference.squaredNorm();
  const double err = (reference - estimate).squaredNorm();
  if (err <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(sig / err);
}

}  // namespace fiss

#endif  // FISS_DSP_HPP
