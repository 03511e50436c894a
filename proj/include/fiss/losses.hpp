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
// Training objectives: MSE reconstruction, contrastive margin regularization
// (Con-Reg), distance-based soft-margin regularization (Dis-Reg), and their
// weighted combination. Regularizers are computed per frame on time-aligned
// vectors, averaged over non-silent frames, then over pairs.

#ifndef FISS_LOSSES_HPP
#define FISS_LOSSES_HPP

#include "fiss/common.hpp"
#include "fiss/nn.hpp"

#include <array>
#include <cmath>
#include <vector>

namespace fiss::losses {

constexpr double kAlphaDefault = 0.2;
constexpr double kLambdaConReg = 1e-6;
constexpr double kLambdaDisReg = 1.0;

// cos(a,b) with the silent-vector convention: either norm below 1e-12 gives
// cosine 0 (distance 1).
inline double cosine(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw shape_error("cosine: vector lengths disagree");
  const double p = a.norm();
  const double q = b.norm();
  if (p < nn::kSilentNorm || q < nn::kSilentNorm) return 0.0;
  return a.dot(b) / (p * q);
}

inline double cosine_distance(const Vec& a, const Vec& b) { return 1.0 - cosine(a, b); }

// Single-frame formulas, handy for spot checks against the batched graphs.
inline double con_reg_term(double cos_val, int y, double alpha) {
  if (alpha < 0.0 || alpha > 2.0) throw config_error("con_reg: alpha must lie in [0, 2]");
  if (y == 1) return 1.0 - cos_val;
  if (y == -1) return std::max(cos_val - alpha, 0.0);
  throw config_error("con_reg: pair label must be +1 or -1");
}

inline double dis_reg_term(double d_latent, double d_vgg) {
  return std::max(d_latent - d_vgg, 0.0);
}

struct PairLabel {
  int y;  // +1 iff i == j
  int i;
  int j;
};

struct PairDiagnostic {
  int i = 0;
  int j = 0;
  int y = 0;
  double value = 0.0;
  long valid_frames = 0;
  long silent_frames = 0;
};

struct PairTerm {
  nn::Graph::NodeId node;  // scalar; 0 contribution when no valid frames
  long valid_frames = 0;
  long total_frames = 0;
};

namespace detail {

inline std::vector<char> and_masks(const std::vector<char>& a, const std::vector<char>& b) {
  std::vector<char> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (a[i] && b[i]) ? 1 : 0;
  return out;
}

inline long count_mask(const std::vector<char>& m) {
  long n = 0;
  for (char c : m) n += c ? 1 : 0;
  return n;
}

}  // namespace detail

// One Con-Reg pair: per frame t, 1 - cos(p_t, v_t) for positives and
// max(cos(p_t, v_t) - alpha, 0) for negatives, averaged over frames where
// both vectors are non-silent.
inline PairTerm con_reg_pair(nn::Graph& g, nn::Graph::NodeId p, nn::Graph::NodeId v,
                             const PairLabel& label, double alpha) {
  if (alpha < 0.0 || alpha > 2.0) throw config_error("con_reg: alpha must lie in [0, 2]");
  if (label.y != 1 && label.y != -1) throw config_error("con_reg: pair label must be +1 or -1");
  if (g.value(p).rows() != g.value(v).rows())
    throw shape_error("con_reg: latent and feature sequences must be time-aligned");

  const auto mask = detail::and_masks(g.nonsilent_rows(p), g.nonsilent_rows(v));
  const auto c = g.row_cosine(p, v);
  nn::Graph::NodeId per_frame;
  if (label.y == 1) {
    per_frame = g.add_scalar(g.scale(c, -1.0), 1.0);  // 1 - cos
  } else {
    per_frame = g.relu_(g.add_scalar(c, -alpha));  // max(cos - alpha, 0)
  }
  PairTerm term;
  term.node = g.masked_mean_rows(per_frame, mask);
  term.valid_frames = detail::count_mask(mask);
  term.total_frames = g.value(p).rows();
  return term;
}

// One Dis-Reg pair (i != j): per frame, max(D_latent - D_vgg, 0) with D the
// cosine distance; the feature distance acts as a soft margin.
inline PairTerm dis_reg_pair(nn::Graph& g, nn::Graph::NodeId p_i, nn::Graph::NodeId p_j,
                             nn::Graph::NodeId v_i, nn::Graph::NodeId v_j) {
  if (g.value(p_i).rows() != g.value(p_j).rows() ||
      g.value(p_i).rows() != g.value(v_i).rows() || g.value(v_i).rows() != g.value(v_j).rows())
    throw shape_error("dis_reg: sequences must be time-aligned");

  auto mask = detail::and_masks(g.nonsilent_rows(p_i), g.nonsilent_rows(p_j));
  mask = detail::and_masks(mask, g.nonsilent_rows(v_i));
  mask = detail::and_masks(mask, g.nonsilent_rows(v_j));

  const auto d_lat = g.add_scalar(g.scale(g.row_cosine(p_i, p_j), -1.0), 1.0);
  const auto d_vgg = g.add_scalar(g.scale(g.row_cosine(v_i, v_j), -1.0), 1.0);
  const auto hinge = g.relu_(g.sub(d_lat, d_vgg));

  PairTerm term;
  term.node = g.masked_mean_rows(hinge, mask);
  term.valid_frames = detail::count_mask(mask);
  term.total_frames = g.value(p_i).rows();
  return term;
}

struct RegResult {
  nn::Graph::NodeId node;  // scalar
  std::vector<PairDiagnostic> pairs;
};

// Con-Reg over one clip: 4 positive pairs (i,i) and 6 unordered negative
// pairs (i,j), i<j. Pairs without any valid frame are dropped from the
// average.
inline RegResult con_reg_loss(nn::Graph& g, const std::array<nn::Graph::NodeId, 4>& projected,
                              const std::array<nn::Graph::NodeId, 4>& features, double alpha) {
  RegResult result;
  std::vector<nn::Graph::NodeId> terms;
  auto add_pair = [&](int i, int j) {
    const PairLabel label{i == j ? 1 : -1, i, j};
    const PairTerm t = con_reg_pair(g, projected[static_cast<std::size_t>(i)],
                                    features[static_cast<std::size_t>(j)], label, alpha);
    PairDiagnostic diag;
    diag.i = i;
    diag.j = j;
    diag.y = label.y;
    diag.value = g.value(t.node)(0, 0);
    diag.valid_frames = t.valid_frames;
    diag.silent_frames = t.total_frames - t.valid_frames;
    result.pairs.push_back(diag);
    if (t.valid_frames > 0) terms.push_back(t.node);
  };
  for (int i = 0; i < 4; ++i) add_pair(i, i);
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) add_pair(i, j);

  result.node = terms.empty() ? g.constant(Mat::Zero(1, 1)) : g.mean_many(terms);
  return result;
}

// Dis-Reg over one clip: the 6 unordered pairs of distinct sources.
inline RegResult dis_reg_loss(nn::Graph& g, const std::array<nn::Graph::NodeId, 4>& projected,
                              const std::array<nn::Graph::NodeId, 4>& features) {
  RegResult result;
  std::vector<nn::Graph::NodeId> terms;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) {
      const PairTerm t = dis_reg_pair(g, projected[static_cast<std::size_t>(i)],
                                      projected[static_cast<std::size_t>(j)],
                                      features[static_cast<std::size_t>(i)],
                                      features[static_cast<std::size_t>(j)]);
      PairDiagnostic diag;
      diag.i = i;
      diag.j = j;
      diag.y = -1;
      diag.value = g.value(t.node)(0, 0);
      diag.valid_frames = t.valid_frames;
      diag.silent_frames = t.total_frames - t.valid_frames;
      result.pairs.push_back(diag);
      if (t.valid_frames > 0) terms.push_back(t.node);
    }
  result.node = terms.empty() ? g.constant(Mat::Zero(1, 1)) : g.mean_many(terms);
  return result;
}

// Mean squared error over all sources, frames, bins and channels.
inline nn::Graph::NodeId mse_loss(nn::Graph& g, const std::vector<nn::Graph::NodeId>& estimates,
                                  const std::vector<Mat>& targets) {
  if (estimates.empty() || estimates.size() != targets.size())
    throw shape_error("mse_loss: estimate/target counts disagree");
  std::vector<nn::Graph::NodeId> per_source;
  for (std::size_t s = 0; s < estimates.size(); ++s) {
    const Mat& t = targets[s];
    if (g.value(estimates[s]).rows() != t.rows() || g.value(estimates[s]).cols() != t.cols())
      throw shape_error("mse_loss: estimate/target shapes disagree for source " +
                        std::to_string(s));
    const auto diff = g.sub(estimates[s], g.constant(t));
    per_source.push_back(g.mean_all(g.square(diff)));
  }
  return g.mean_many(per_source);
}

struct LossBreakdown {
  double mse = 0.0;
  double reg = 0.0;
  double lambda = 0.0;
  double total = 0.0;
  std::vector<PairDiagnostic> pairs;
};

// L_total = L_mse + lambda * L_reg
inline nn::Graph::NodeId total_loss(nn::Graph& g, nn::Graph::NodeId mse, nn::Graph::NodeId reg,
                                    double lambda) {
  if (lambda < 0.0) throw config_error("total_loss: lambda must be >= 0");
  return g.add(mse, g.scale(reg, lambda));
}

}  // namespace fiss::losses

#endif  // FISS_LOSSES_HPP
