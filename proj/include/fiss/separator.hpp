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
// The four-source mask-estimation network: per-source dense encoders into
// bidirectional recurrent layers, two cross-source bridging averages, per
// source mask decoders, the Concat wiring, and the shared kernel-size-1
// projection head. Also the FCK1 checkpoint container.

#ifndef FISS_SEPARATOR_HPP
#define FISS_SEPARATOR_HPP

#include "fiss/common.hpp"
#include "fiss/dsp.hpp"
#include "fiss/nn.hpp"
#include "fiss/sidefeat.hpp"

#include <array>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace fiss {

enum class Method { kBaseline, kConcat, kConReg, kDisReg };

inline Method method_from_name(const std::string& name) {
  if (name == "baseline") return Method::kBaseline;
  if (name == "concat") return Method::kConcat;
  if (name == "con_reg" || name == "con-reg") return Method::kConReg;
  if (name == "dis_reg" || name == "dis-reg") return Method::kDisReg;
  throw config_error("unknown method: " + name +
                     " (expected baseline|concat|con_reg|dis_reg)");
}

inline std::string method_name(Method m) {
  switch (m) {
    case Method::kBaseline: return "baseline";
    case Method::kConcat: return "concat";
    case Method::kConReg: return "con_reg";
    case Method::kDisReg: return "dis_reg";
  }
  throw config_error("invalid method value");
}

inline bool method_uses_regularizer(Method m) {
  return m == Method::kConReg || m == Method::kDisReg;
}

struct SeparatorConfig {
  Method method = Method::kBaseline;
  int latent_width = 64;  // B; must equal 2*hidden so the recurrent output is the latent
  int hidden = 32;        // per-direction recurrent size
  int num_layers = 1;
  int channels = 2;
  int win_length = 4096;
  int hop_length = 1024;
  int max_bins = 0;  // 0 = full band; otherwise the model sees/masks the first max_bins bins
  double alpha = 0.2;
  double lambda = 0.0;
  bool normalize_input = true;
  std::uint64_t seed = 17;

  static double default_lambda(Method m) {
    switch (m) {
      case Method::kConReg: return 1e-6;
      case Method::kDisReg: return 1.0;
      default: return 0.0;
    }
  }

  int n_bins_full() const { return win_length / 2 + 1; }
  int n_bins_model() const {
    return (max_bins > 0 && max_bins < n_bins_full()) ? max_bins : n_bins_full();
  }
  int input_width() const { return channels * n_bins_model(); }
  double latent_frame_period(int sample_rate = kSampleRate) const {
    return static_cast<double>(hop_length) / sample_rate;
  }

  void validate() const {
    if (latent_width < 8) throw config_error("separator: latent width B must be >= 8");
    if (2 * hidden != latent_width)
      throw config_error("separator: recurrent output is the latent, so 2*hidden must equal B (" +
                         std::to_string(2 * hidden) + " vs " + std::to_string(latent_width) + ")");
    if (num_layers < 1) throw config_error("separator: num_layers must be >= 1");
    if (channels != 1 && channels != 2) throw config_error("separator: channels must be 1 or 2");
    if (alpha < 0.0 || alpha > 2.0) throw config_error("separator: alpha must lie in [0, 2]");
    if (lambda < 0.0) throw config_error("separator: lambda must be >= 0");
    if (win_length <= 0 || (win_length & (win_length - 1)) != 0)
      throw config_error("separator: win_length must be a power of two");
    if (hop_length <= 0 || hop_length > win_length)
      throw config_error("separator: hop_length must lie in [1, win_length]");
    if (max_bins < 0 || max_bins > n_bins_full())
      throw config_error("separator: max_bins out of range");
  }

  // Canonical string; hashed into checkpoints so a checkpoint can refuse to
  // load under a different architecture.
  std::string canonical() const {
    std::ostringstream os;
    os << "method=" << method_name(method) << ";B=" << latent_width << ";hidden=" << hidden
       << ";layers=" << num_layers << ";channels=" << channels << ";win=" << win_length
       << ";hop=" << hop_length << ";max_bins=" << max_bins << ";alpha=" << alpha
       << ";lambda=" << lambda << ";normalize=" << (normalize_input ? 1 : 0)
       << ";seed=" << seed;
    return os.str();
  }
  std::uint64_t hash() const { return fnv1a64(canonical()); }
};

// Cross-source bridge: each branch becomes the mean of itself and the
// four-branch average, so information crosses branches without erasing
// per-source identity. Identical inputs are a fixed point.
inline std::array<nn::Graph::NodeId, 4> bridge_average(nn::Graph& g,
                                                       const std::array<nn::Graph::NodeId, 4>& xs) {
  const auto m = g.mean_many({xs[0], xs[1], xs[2], xs[3]});
  std::array<nn::Graph::NodeId, 4> out{};
  for (int s = 0; s < 4; ++s)
    out[static_cast<std::size_t>(s)] = g.scale(g.add(xs[static_cast<std::size_t>(s)], m), 0.5);
  return out;
}

struct ForwardOutputs {
  std::array<nn::Graph::NodeId, 4> masks{};      // [T x ch*bins_model], in [0,1]
  std::array<nn::Graph::NodeId, 4> estimates{};  // mask .* mixture magnitude
  std::array<nn::Graph::NodeId, 4> latents{};    // [T x B]
  std::array<nn::Graph::NodeId, 4> projected{};  // [T x 128] when has_projection
  bool has_projection = false;
};

class SeparatorModel {
 public:
  struct Encoder {
    nn::Tensor W1, b1;
    std::vector<nn::Graph::LstmDir> fwd, bwd;  // one per recurrent layer
  };
  struct Decoder {
    nn::Tensor W2, b2, W3, b3;
  };

  SeparatorConfig cfg;
  std::array<Encoder, 4> enc;
  std::array<Decoder, 4> dec;
  nn::Tensor proj_W, proj_b;          // shared kernel-size-1 head, B -> 128
  nn::Tensor scaler_mean, scaler_std;  // [1 x input_width], non-trainable

  static SeparatorModel init(const SeparatorConfig& config) {
    config.validate();
    SeparatorModel m;
    m.cfg = config;
    const int B = config.latent_width;
    const int h = config.hidden;
    const int D = config.input_width();
    const int dec_in = B + (config.method == Method::kConcat ? kFeatureDim : 0);

    for (int s = 0; s < 4; ++s) {
      const std::string p = "enc" + std::to_string(s);
      auto& e = m.enc[static_cast<std::size_t>(s)];
      e.W1 = nn::Tensor(p + ".W1", D, B);
      e.b1 = nn::Tensor(p + ".b1", 1, B);
      for (int l = 0; l < config.num_layers; ++l) {
        e.fwd.emplace_back(p + ".l" + std::to_string(l) + ".fwd", B, h);
        e.bwd.emplace_back(p + ".l" + std::to_string(l) + ".bwd", B, h);
      }
      const std::string q = "dec" + std::to_string(s);
      auto& d = m.dec[static_cast<std::size_t>(s)];
      d.W2 = nn::Tensor(q + ".W2", dec_in, B);
      d.b2 = nn::Tensor(q + ".b2", 1, B);
      d.W3 = nn::Tensor(q + ".W3", B, D);
      d.b3 = nn::Tensor(q + ".b3", 1, D);
    }
    m.proj_W = nn::Tensor("proj.W", B, kFeatureDim);
    m.proj_b = nn::Tensor("proj.b", 1, kFeatureDim);
    m.scaler_mean = nn::Tensor("scaler.mean", Mat::Zero(1, D));
    m.scaler_std = nn::Tensor("scaler.std", Mat::Ones(1, D));

    // seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init, one stream per tensor
    std::uint64_t stream = 1;
    for (nn::Tensor* t : m.all_tensors()) {
      if (t == &m.scaler_mean || t == &m.scaler_std) continue;
      const bool is_bias = t->value.rows() == 1 && t->name.find(".b") != std::string::npos;
      if (is_bias) continue;  // biases start at zero
      const double bound = 1.0 / std::sqrt(static_cast<double>(t->value.rows()));
      auto rng = make_rng(config.seed, stream++);
      std::uniform_real_distribution<double> u(-bound, bound);
      for (long i = 0; i < t->value.size(); ++i) t->value.data()[i] = u(rng);
    }
    return m;
  }

  std::vector<nn::Tensor*> all_tensors() {
    std::vector<nn::Tensor*> out;
    for (int s = 0; s < 4; ++s) {
      auto& e = enc[static_cast<std::size_t>(s)];
      out.push_back(&e.W1);
      out.push_back(&e.b1);
      for (auto& l : e.fwd) {
        out.push_back(&l.Wx);
        out.push_back(&l.Wh);
        out.push_back(&l.b);
      }
      for (auto& l : e.bwd) {
        out.push_back(&l.Wx);
        out.push_back(&l.Wh);
        out.push_back(&l.b);
      }
      auto& d = dec[static_cast<std::size_t>(s)];
      out.push_back(&d.W2);
      out.push_back(&d.b2);
      out.push_back(&d.W3);
      out.push_back(&d.b3);
    }
    out.push_back(&proj_W);
    out.push_back(&proj_b);
    out.push_back(&scaler_mean);
    out.push_back(&scaler_std);
    return out;
  }

  // Parameters the optimizer touches. The projection head only trains under
  // the regularized methods; the scaler is fitted, not trained.
  std::vector<nn::Tensor*> trainable() {
    std::vector<nn::Tensor*> out;
    for (nn::Tensor* t : all_tensors()) {
      if (t == &scaler_mean || t == &scaler_std) continue;
      if ((t == &proj_W || t == &proj_b) && !method_uses_regularizer(cfg.method)) continue;
      out.push_back(t);
    }
    return out;
  }

  long param_count() {
    long n = 0;
    for (nn::Tensor* t : trainable()) n += t->value.size();
    return n;
  }

  // Crops to the model band and stacks channels along the feature axis:
  // [T x channels*bins_model].
  Mat model_input(const std::vector<Spectrogram>& channel_mags) const {
    if (static_cast<int>(channel_mags.size()) != cfg.channels)
      throw shape_error("model_input: expected " + std::to_string(cfg.channels) +
                        " channels, got " + std::to_string(channel_mags.size()));
    const long T = channel_mags[0].frames();
    const int nb = cfg.n_bins_model();
    for (const auto& m : channel_mags)
      if (m.frames() != T) throw shape_error("model_input: channel frame counts disagree");
    Mat x(T, static_cast<long>(cfg.channels) * nb);
    for (int c = 0; c < cfg.channels; ++c)
      x.middleCols(static_cast<long>(c) * nb, nb) =
          channel_mags[static_cast<std::size_t>(c)].values.leftCols(nb);
    return x;
  }

  // Splits a stacked model-band mask back into per-channel full-band masks;
  // bins above the model band get 0 (band-limited operation).
  std::vector<Mat> full_band_masks(const Mat& stacked) const {
    const int nb = cfg.n_bins_model();
    if (stacked.cols() != static_cast<long>(cfg.channels) * nb)
      throw shape_error("full_band_masks: width does not match config");
    std::vector<Mat> out;
    for (int c = 0; c < cfg.channels; ++c) {
      Mat m = Mat::Zero(stacked.rows(), cfg.n_bins_full());
      m.leftCols(nb) = stacked.middleCols(static_cast<long>(c) * nb, nb);
      out.push_back(std::move(m));
    }
    return out;
  }

  void set_scaler(const Mat& mean, const Mat& std) {
    if (mean.rows() != 1 || mean.cols() != cfg.input_width() || std.rows() != 1 ||
        std.cols() != cfg.input_width())
      throw shape_error("set_scaler: expected [1 x input_width] statistics");
    scaler_mean.value = mean;
    scaler_std.value = std.cwiseMax(1e-6);
  }

  Mat normalize(const Mat& x) const {
    if (!cfg.normalize_input) return x;
    return (x.rowwise() - scaler_mean.value.row(0)).array().rowwise() /
           scaler_std.value.row(0).array();
  }

  // Full forward pass. `mix_model` is the cropped stacked mixture magnitude
  // [T x input_width]; `side_mix` the mixture side features aligned to the
  // latent frames, required for concat. The mask path is built first so its
  // values do not depend on whether projections are requested.
  ForwardOutputs forward(nn::Graph& g, const Mat& mix_model, const Mat* side_mix,
                         bool with_projection) {
    if (mix_model.cols() != cfg.input_width())
      throw shape_error("forward: input width " + std::to_string(mix_model.cols()) +
                        " does not match config width " + std::to_string(cfg.input_width()));
    if (cfg.method == Method::kConcat) {
      if (side_mix == nullptr)
        throw missing_features_error(
            "concat method requires mixture side features (also at inference)");
      if (side_mix->rows() != mix_model.rows() || side_mix->cols() != kFeatureDim)
        throw shape_error("forward: side features must be [T x 128], time-aligned");
    }

    const auto input = g.constant(normalize(mix_model));
    const auto mix_node = g.constant(mix_model);

    std::array<nn::Graph::NodeId, 4> act{};
    for (int s = 0; s < 4; ++s) {
      auto& e = enc[static_cast<std::size_t>(s)];
      act[static_cast<std::size_t>(s)] =
          g.tanh_(g.dense(input, g.param(e.W1), g.param(e.b1)));
    }
    const auto bridged = bridge_average(g, act);

    ForwardOutputs out;
    for (int s = 0; s < 4; ++s) {
      auto& e = enc[static_cast<std::size_t>(s)];
      nn::Graph::NodeId x = bridged[static_cast<std::size_t>(s)];
      for (std::size_t l = 0; l < e.fwd.size(); ++l) x = g.bilstm(x, e.fwd[l], e.bwd[l]);
      out.latents[static_cast<std::size_t>(s)] = x;
    }

    std::array<nn::Graph::NodeId, 4> dec_in{};
    if (cfg.method == Method::kConcat) {
      const auto side_node = g.constant(*side_mix);
      for (int s = 0; s < 4; ++s)
        dec_in[static_cast<std::size_t>(s)] =
            g.concat_cols(out.latents[static_cast<std::size_t>(s)], side_node);
    } else {
      dec_in = out.latents;
    }
    const auto dec_bridged = bridge_average(g, dec_in);

    for (int s = 0; s < 4; ++s) {
      auto& d = dec[static_cast<std::size_t>(s)];
      const auto hidden_act =
          g.relu_(g.dense(dec_bridged[static_cast<std::size_t>(s)], g.param(d.W2), g.param(d.b2)));
      const auto mask = g.sigmoid_(g.dense(hidden_act, g.param(d.W3), g.param(d.b3)));
      out.masks[static_cast<std::size_t>(s)] = mask;
      out.estimates[static_cast<std::size_t>(s)] = g.hadamard(mask, mix_node);
    }

    if (with_projection) {
      for (int s = 0; s < 4; ++s)
        out.projected[static_cast<std::size_t>(s)] = project(g, out.latents[static_cast<std::size_t>(s)]);
      out.has_projection = true;
    }
    return out;
  }

  // Per-frame affine map B -> 128 (a kernel-size-1 convolution over time).
  nn::Graph::NodeId project(nn::Graph& g, nn::Graph::NodeId latent) {
    return g.dense(latent, g.param(proj_W), g.param(proj_b));
  }
};

// ---------------------------------------------------------------------------
// Separation of a full clip through the mask pipeline (mixture phase kept).
// Side features are resolved by the caller; nullptr is only legal for
// methods that do not need them at inference.
// ---------------------------------------------------------------------------

struct SeparationResult {
  std::array<AudioClip, 4> stems;
  std::array<Mat, 4> model_masks;  // stacked model-band masks
  long frames = 0;
};

inline SeparationResult separate_clip(SeparatorModel& model, const AudioClip& clip,
                                      const SideFeatureSequence* mixture_features) {
  AudioClip input = clip;
  input.validate();
  if (input.channels() == 1 && model.cfg.channels == 2) {
    // mono in, stereo model: duplicate the channel
    Mat st(2, input.n_samples());
    st.row(0) = input.samples.row(0);
    st.row(1) = input.samples.row(0);
    input.samples = std::move(st);
  } else if (input.channels() != model.cfg.channels) {
    throw shape_error("separate: clip has " + std::to_string(input.channels()) +
                      " channels but the model expects " + std::to_string(model.cfg.channels));
  }

  const auto specs = stft(input, model.cfg.win_length, model.cfg.hop_length);
  std::vector<Spectrogram> mags;
  mags.reserve(specs.size());
  for (const auto& s : specs) mags.push_back(magnitude(s));
  const Mat mix_model = model.model_input(mags);

  Mat side;
  const Mat* side_ptr = nullptr;
  if (model.cfg.method == Method::kConcat) {
    if (mixture_features == nullptr)
      throw missing_features_error("concat method requires mixture side features at inference");
    side = upsample_repeat(*mixture_features,
                           model.cfg.latent_frame_period(input.sample_rate), mix_model.rows());
    side_ptr = &side;
  }

  nn::Graph g;
  const ForwardOutputs out = model.forward(g, mix_model, side_ptr, false);

  SeparationResult result;
  result.frames = mix_model.rows();
  for (int s = 0; s < 4; ++s) {
    result.model_masks[static_cast<std::size_t>(s)] =
        g.value(out.masks[static_cast<std::size_t>(s)]);
    const auto channel_masks =
        model.full_band_masks(result.model_masks[static_cast<std::size_t>(s)]);
    std::vector<ComplexSpectrogram> est;
    est.reserve(specs.size());
    for (std::size_t c = 0; c < specs.size(); ++c)
      est.push_back(mask_apply(channel_masks[c], specs[c]));
    result.stems[static_cast<std::size_t>(s)] = istft(est, input.n_samples());
  }
  return result;
}

// ---------------------------------------------------------------------------
// FCK1 checkpoint: magic "FCK1", u32 version, u64 config hash, named f64
// tensors, optional Adam state.
// ---------------------------------------------------------------------------

namespace ckpt_detail {

inline void write_mat(std::ostream& os, const Mat& m) {
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows()));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols()));
  for (long r = 0; r < m.rows(); ++r)
    for (long c = 0; c < m.cols(); ++c) write_le<double>(os, m(r, c));
}

inline Mat read_mat(std::istream& is, const char* what) {
  const auto rows = read_le<std::uint32_t>(is, what);
  const auto cols = read_le<std::uint32_t>(is, what);
  Mat m(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = read_le<double>(is, what);
  return m;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, SeparatorModel& model,
                            const nn::AdamState* adam = nullptr) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot create checkpoint file: " + path);
  f.write("FCK1", 4);
  write_le<std::uint32_t>(f, 1);
  write_le<std::uint64_t>(f, model.cfg.hash());
  write_string(f, model.cfg.canonical());

  const auto tensors = model.all_tensors();
  write_le<std::uint32_t>(f, static_cast<std::uint32_t>(tensors.size()));
  for (nn::Tensor* t : tensors) {
    write_string(f, t->name);
    ckpt_detail::write_mat(f, t->value);
  }

  write_le<std::uint8_t>(f, adam != nullptr ? 1 : 0);
  if (adam != nullptr) {
    write_le<std::uint64_t>(f, static_cast<std::uint64_t>(adam->step));
    write_le<double>(f, adam->lr);
    write_le<double>(f, adam->weight_decay);
    write_le<std::uint32_t>(f, static_cast<std::uint32_t>(adam->m.size()));
    for (std::size_t i = 0; i < adam->m.size(); ++i) {
      ckpt_detail::write_mat(f, adam->m[i]);
      ckpt_detail::write_mat(f, adam->v[i]);
    }
  }
  if (!f) throw io_error("failed to write checkpoint: " + path);
}

// Loads weights into a freshly initialized model. When `expected_hash` is
// set, a stored hash that differs is rejected before any tensor is touched.
inline SeparatorModel load_checkpoint(const std::string& path, const SeparatorConfig& config,
                                      std::optional<std::uint64_t> expected_hash = std::nullopt,
                                      nn::AdamState* adam_out = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open checkpoint file: " + path);
  char magic[4] = {0, 0, 0, 0};
  f.read(magic, 4);
  if (f.gcount() != 4 || std::memcmp(magic, "FCK1", 4) != 0)
    throw bad_magic_error("bad magic in checkpoint file: " + path);
  const auto version = read_le<std::uint32_t>(f, "checkpoint version");
  if (version != 1) throw format_error("unsupported checkpoint version " + std::to_string(version));
  const auto stored_hash = read_le<std::uint64_t>(f, "config hash");
  const std::string stored_canonical = read_string(f, "config string");
  if (expected_hash.has_value() && stored_hash != *expected_hash)
    throw checkpoint_mismatch_error("checkpoint config hash " + hex64(stored_hash) +
                                    " does not match requested config " + hex64(*expected_hash) +
                                    " (stored: " + stored_canonical + ")");

  SeparatorModel model = SeparatorModel::init(config);
  auto tensors = model.all_tensors();
  const auto n = read_le<std::uint32_t>(f, "tensor count");
  std::size_t loaded = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = read_string(f, "tensor name");
    Mat value = ckpt_detail::read_mat(f, name.c_str());
    bool found = false;
    for (nn::Tensor* t : tensors) {
      if (t->name == name) {
        if (t->value.rows() != value.rows() || t->value.cols() != value.cols())
          throw checkpoint_mismatch_error("tensor '" + name + "' has shape " +
                                          std::to_string(value.rows()) + "x" +
                                          std::to_string(value.cols()) +
                                          " but the config expects " +
                                          std::to_string(t->value.rows()) + "x" +
                                          std::to_string(t->value.cols()));
        t->value = std::move(value);
        t->grad = Mat::Zero(t->value.rows(), t->value.cols());
        found = true;
        ++loaded;
        break;
      }
    }
    if (!found) throw format_error("checkpoint tensor '" + name + "' is unknown to this config");
  }
  if (loaded != tensors.size())
    throw format_error("checkpoint is missing " + std::to_string(tensors.size() - loaded) +
                       " tensors");

  const auto has_adam = read_le<std::uint8_t>(f, "optimizer flag");
  if (has_adam && adam_out != nullptr) {
    adam_out->step = static_cast<long>(read_le<std::uint64_t>(f, "adam step"));
    adam_out->lr = read_le<double>(f, "adam lr");
    adam_out->weight_decay = read_le<double>(f, "adam weight decay");
    const auto k = read_le<std::uint32_t>(f, "adam tensor count");
    adam_out->m.clear();
    adam_out->v.clear();
    for (std::uint32_t i = 0; i < k; ++i) {
      adam_out->m.push_back(ckpt_detail::read_mat(f, "adam m"));
      adam_out->v.push_back(ckpt_detail::read_mat(f, "adam v"));
    }
  }
  return model;
}

}  // namespace fiss

#endif  // FISS_SEPARATOR_HPP
