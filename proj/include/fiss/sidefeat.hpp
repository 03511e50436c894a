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
//
// Side features: a deterministic stand-in extractor producing 128-dim,
// 0.96 s, PCA-whitened, 8-bit quantized embeddings, plus ingestion of
// precomputed features from SFV1 files. Downstream code only ever sees the
// dequantized SideFeatureSequence, whichever source produced it.

#ifndef FISS_SIDEFEAT_HPP
#define FISS_SIDEFEAT_HPP

#include "fiss/audio.hpp"
#include "fiss/common.hpp"
#include "fiss/dsp.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace fiss {

constexpr double kFeatureFramePeriod = 0.96;  // seconds, no overlap
constexpr int kFeatureDim = 128;
constexpr int kPatchMelBands = 64;
constexpr int kPatchWin = 1024;
constexpr int kPatchHop = 512;
constexpr double kDefaultQuantMin = -4.0;
constexpr double kDefaultQuantMax = 4.0;

enum class SourceTag : std::uint8_t { kMixture = 0, kVocals = 1, kDrums = 2, kBass = 3, kOther = 4 };

inline SourceTag source_tag_from_name(const std::string& name) {
  if (name == "mixture") return SourceTag::kMixture;
  if (name == "vocals") return SourceTag::kVocals;
  if (name == "drums") return SourceTag::kDrums;
  if (name == "bass") return SourceTag::kBass;
  if (name == "other") return SourceTag::kOther;
  throw config_error("unknown source tag: " + name);
}

inline std::string source_tag_name(SourceTag t) {
  switch (t) {
    case SourceTag::kMixture: return "mixture";
    case SourceTag::kVocals: return "vocals";
    case SourceTag::kDrums: return "drums";
    case SourceTag::kBass: return "bass";
    case SourceTag::kOther: return "other";
  }
  throw config_error("invalid source tag value");
}

// Dequantized side features, frames as rows: [T_v x 128].
struct SideFeatureSequence {
  Mat frames;
  double frame_period = kFeatureFramePeriod;
  SourceTag source_tag = SourceTag::kMixture;

  long n_frames() const { return frames.rows(); }

  void validate() const {
    if (frames.cols() != kFeatureDim)
      throw dimension_error("SideFeatureSequence: feature dimension must be 128, got " +
                            std::to_string(frames.cols()));
    if (frames.rows() < 1) throw shape_error("SideFeatureSequence: needs at least one frame");
    if (!frames.allFinite()) throw numeric_error("SideFeatureSequence: non-finite value");
  }
};

// ---------------------------------------------------------------------------
// 8-bit uniform quantization over a fixed range.
// ---------------------------------------------------------------------------

struct QuantRange {
  double min = kDefaultQuantMin;
  double max = kDefaultQuantMax;
};

struct QuantizedFeatures {
  std::vector<std::uint8_t> codes;  // row-major [T_v x dim]
  long rows = 0;
  long cols = 0;
  QuantRange range;
  double frame_period = kFeatureFramePeriod;
  SourceTag source_tag = SourceTag::kMixture;

  std::uint8_t code(long r, long c) const {
    return codes[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) +
                 static_cast<std::size_t>(c)];
  }
};

inline QuantizedFeatures quantize8(const Mat& x, QuantRange range,
                                   double frame_period = kFeatureFramePeriod,
                                   SourceTag tag = SourceTag::kMixture) {
  if (!(range.min < range.max)) throw config_error("quantize8: range.min must be < range.max");
  QuantizedFeatures q;
  q.rows = x.rows();
  q.cols = x.cols();
  q.range = range;
  q.frame_period = frame_period;
  q.source_tag = tag;
  q.codes.resize(static_cast<std::size_t>(x.size()));
  const double scale = 255.0 / (range.max - range.min);
  for (long r = 0; r < x.rows(); ++r)
    for (long c = 0; c < x.cols(); ++c) {
      const double v = std::min(std::max(x(r, c), range.min), range.max);
      const double code = std::round((v - range.min) * scale);
      q.codes[static_cast<std::size_t>(r) * static_cast<std::size_t>(x.cols()) +
              static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(code);
    }
  return q;
}

inline Mat dequantize8(const QuantizedFeatures& q) {
  Mat x(q.rows, q.cols);
  const double step = (q.range.max - q.range.min) / 255.0;
  for (long r = 0; r < q.rows; ++r)
    for (long c = 0; c < q.cols; ++c) x(r, c) = q.range.min + q.code(r, c) * step;
  return x;
}

inline SideFeatureSequence to_sequence(const QuantizedFeatures& q) {
  SideFeatureSequence seq;
  seq.frames = dequantize8(q);
  seq.frame_period = q.frame_period;
  seq.source_tag = q.source_tag;
  seq.validate();
  return seq;
}

// ---------------------------------------------------------------------------
// PCA whitening
// ---------------------------------------------------------------------------

struct PCAWhitener {
  Vec mean;        // [input_dim]
  Mat projection;  // [input_dim x 128], columns orthonormal before 1/sqrt(eig) scaling
  double eig_floor = 1e-8;
  std::uint64_t seed = 0;

  bool fitted() const { return projection.size() > 0; }

  Mat apply(const Mat& x) const {
    if (!fitted()) throw config_error("PCAWhitener: not fitted");
    if (x.cols() != mean.size())
      throw shape_error("PCAWhitener: input dim " + std::to_string(x.cols()) +
                        " does not match fitted dim " + std::to_string(mean.size()));
    return (x.rowwise() - mean.transpose()) * projection;
  }
};

// Eigendecomposition of the sample covariance; eigenvalues below the floor
// are clamped so rank-deficient inputs never divide by ~0.
inline PCAWhitener fit_whitener(const Mat& features, std::uint64_t seed,
                                double eig_floor = 1e-8) {
  const long n = features.rows();
  const long d = features.cols();
  if (d < kFeatureDim)
    throw shape_error("fit_whitener: need at least 128 input dims, got " + std::to_string(d));
  if (n < 10 * d)
    throw shape_error("fit_whitener: need >= 10x more rows than dims (" + std::to_string(n) +
                      " rows for " + std::to_string(d) + " dims)");

  PCAWhitener w;
  w.seed = seed;
  w.eig_floor = eig_floor;
  w.mean = features.colwise().mean().transpose();
  const Mat centered = features.rowwise() - w.mean.transpose();
  const Mat cov = (centered.transpose() * centered) / static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Mat> solver(cov);
  if (solver.info() != Eigen::Success) throw numeric_error("fit_whitener: eigensolver failed");

  // eigenvalues come back ascending; keep the top 128 components, largest first
  w.projection.resize(d, kFeatureDim);
  for (int k = 0; k < kFeatureDim; ++k) {
    const long src = d - 1 - k;
    const double lambda = std::max(solver.eigenvalues()[src], eig_floor);
    w.projection.col(k) = solver.eigenvectors().col(src) / std::sqrt(lambda);
  }
  return w;
}

// ---------------------------------------------------------------------------
// Pseudo-VGGish extractor: per 0.96 s patch, log-mel statistics (64 bands,
// mean and standard deviation over the patch -> 128 raw dims), then
// PCA-whiten and 8-bit quantize/dequantize. Reproduces the interface
// properties the training methods rely on; it does not try to reproduce any
// particular network's embedding values.
// ---------------------------------------------------------------------------

inline long patch_samples(int sample_rate) {
  return static_cast<long>(std::llround(kFeatureFramePeriod * sample_rate));
}

// Raw 128-dim patch statistics, before whitening. Exposed so the whitener
// can be fitted on a training corpus.
inline Mat raw_patch_features(const AudioClip& clip) {
  clip.validate();
  const long psamp = patch_samples(clip.sample_rate);
  const long t_v = clip.n_samples() / psamp;
  if (t_v < 1)
    throw framing_error("side features: clip shorter than one 0.96 s patch (" +
                        std::to_string(clip.n_samples()) + " samples)");

  const Vec mono = clip.mono();
  const Mat mel = mel_matrix(kPatchWin / 2 + 1, kPatchMelBands, clip.sample_rate);

  Mat raw(t_v, kFeatureDim);
  FramingInfo framing{kPatchWin, kPatchHop, clip.sample_rate, Window::kHann};
  for (long p = 0; p < t_v; ++p) {
    const Eigen::RowVectorXd patch = mono.segment(p * psamp, psamp).transpose();
    const ComplexSpectrogram spec = stft_channel(patch, framing);
    const Mat power = spec.values.cwiseAbs2();
    // [frames x mels]
    const Mat mel_power = power * mel.transpose();
    const Mat log_mel = (mel_power.array() + 1e-10).log().matrix();
    for (int b = 0; b < kPatchMelBands; ++b) {
      const double mu = log_mel.col(b).mean();
      const double var = (log_mel.col(b).array() - mu).square().mean();
      raw(p, b) = mu;
      raw(p, kPatchMelBands + b) = std::sqrt(var);
    }
  }
  return raw;
}

inline SideFeatureSequence extract_pseudo_vggish(const AudioClip& clip, const PCAWhitener& whitener,
                                                 SourceTag tag = SourceTag::kMixture,
                                                 QuantRange range = QuantRange{}) {
  if (!whitener.fitted()) throw config_error("extract_pseudo_vggish: whitener not fitted");
  const Mat raw = raw_patch_features(clip);
  const Mat whitened = whitener.apply(raw);
  const QuantizedFeatures q = quantize8(whitened, range, kFeatureFramePeriod, tag);
  return to_sequence(q);
}

// ---------------------------------------------------------------------------
// Temporal alignment: repeat each 0.96 s feature frame n times to cover the
// latent frame rate, with the final frame extended over any tail.
// ---------------------------------------------------------------------------

inline Mat upsample_repeat(const SideFeatureSequence& v, double latent_frame_period, long t_l) {
  v.validate();
  if (t_l < 1) throw shape_error("upsample_repeat: T_l must be >= 1");
  if (latent_frame_period <= 0.0)
    throw config_error("upsample_repeat: latent frame period must be positive");
  long n = static_cast<long>(std::llround(v.frame_period / latent_frame_period));
  if (n < 1) n = 1;
  const long t_v = v.n_frames();
  Mat out(t_l, v.frames.cols());
  for (long t = 0; t < t_l; ++t) {
    const long src = std::min(t / n, t_v - 1);
    out.row(t) = v.frames.row(src);
  }
  return out;
}

// ---------------------------------------------------------------------------
// SFV1 container: magic "SFV1", little-endian u32 T_v, u32 dim,
// f32 range_min, f32 range_max, f32 frame_period, u8 source_tag, then
// T_v*dim u8 codes row-major.
// ---------------------------------------------------------------------------

inline void save_features(const QuantizedFeatures& q, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot create feature file: " + path);
  f.write("SFV1", 4);
  write_le<std::uint32_t>(f, static_cast<std::uint32_t>(q.rows));
  write_le<std::uint32_t>(f, static_cast<std::uint32_t>(q.cols));
  write_le<float>(f, static_cast<float>(q.range.min));
  write_le<float>(f, static_cast<float>(q.range.max));
  write_le<float>(f, static_cast<float>(q.frame_period));
  write_le<std::uint8_t>(f, static_cast<std::uint8_t>(q.source_tag));
  f.write(reinterpret_cast<const char*>(q.codes.data()),
          static_cast<std::streamsize>(q.codes.size()));
  if (!f) throw io_error("failed to write feature file: " + path);
}

inline QuantizedFeatures load_features(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open feature file: " + path);
  char magic[4] = {0, 0, 0, 0};
  f.read(magic, 4);
  if (f.gcount() != 4) throw truncated_error("feature file truncated before magic: " + path);
  if (std::memcmp(magic, "SFV1", 4) != 0)
    throw bad_magic_error("bad magic in feature file (expected SFV1): " + path);

  QuantizedFeatures q;
  q.rows = read_le<std::uint32_t>(f, "SFV1 frame count");
  q.cols = read_le<std::uint32_t>(f, "SFV1 dim");
  q.range.min = read_le<float>(f, "SFV1 range_min");
  q.range.max = read_le<float>(f, "SFV1 range_max");
  q.frame_period = read_le<float>(f, "SFV1 frame_period");
  const auto tag = read_le<std::uint8_t>(f, "SFV1 source_tag");
  if (tag > static_cast<std::uint8_t>(SourceTag::kOther))
    throw format_error("invalid source tag in feature file: " + path);
  q.source_tag = static_cast<SourceTag>(tag);

  if (q.cols != kFeatureDim)
    throw dimension_error("feature file dimension must be 128, got " + std::to_string(q.cols) +
                          ": " + path);
  const std::size_t n = static_cast<std::size_t>(q.rows) * static_cast<std::size_t>(q.cols);
  q.codes.resize(n);
  f.read(reinterpret_cast<char*>(q.codes.data()), static_cast<std::streamsize>(n));
  if (f.gcount() != static_cast<std::streamsize>(n))
    throw truncated_error("feature file payload truncated: " + path);
  return q;
}

}  // namespace fiss

#endif  // FISS_SIDEFEAT_HPP
