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
// Minimal reverse-mode differentiation engine: a tape of eagerly evaluated
// matrix ops with exact analytic backward passes, a fused bidirectional LSTM
// with backpropagation through time, the Adam optimizer, and a central
// finite-difference gradient checker.

#ifndef FISS_NN_HPP
#define FISS_NN_HPP

#include "fiss/common.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace fiss::nn {

constexpr double kSilentNorm = 1e-12;

// A named trainable (or fitted) parameter. Gradients accumulate additively
// into `grad`; the tape never mutates `value`.
struct Tensor {
  std::string name;
  Mat value;
  Mat grad;

  Tensor() = default;
  Tensor(std::string n, long rows, long cols)
      : name(std::move(n)), value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)) {}
  Tensor(std::string n, Mat v) : name(std::move(n)), value(std::move(v)) {
    grad = Mat::Zero(value.rows(), value.cols());
  }

  void zero_grad() { grad.setZero(); }
};

inline void zero_grads(const std::vector<Tensor*>& params) {
  for (auto* p : params) p->zero_grad();
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

class Graph {
 public:
  using NodeId = int;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  const Mat& value(NodeId id) const { return nodes_[check(id)].value; }
  const Mat& grad(NodeId id) const { return nodes_[check(id)].grad; }
  bool needs_grad(NodeId id) const { return nodes_[check(id)].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  NodeId constant(Mat v) { return push("constant", std::move(v), false, {}, nullptr); }

  NodeId param(Tensor& t) {
    const NodeId id = push("param", t.value, true, {}, nullptr);
    Tensor* tp = &t;
    nodes_[id].backprop = [this, id, tp]() { tp->grad += nodes_[id].grad; };
    return id;
  }

  NodeId add(NodeId a, NodeId b) {
    same_shape("add", a, b);
    const NodeId id = push("add", value(a) + value(b), any_grad({a, b}), {a, b}, nullptr);
    nodes_[id].backprop = [this, id, a, b]() {
      accumulate(a, nodes_[id].grad);
      accumulate(b, nodes_[id].grad);
    };
    return id;
  }

  NodeId sub(NodeId a, NodeId b) {
    same_shape("sub", a, b);
    const NodeId id = push("sub", value(a) - value(b), any_grad({a, b}), {a, b}, nullptr);
    nodes_[id].backprop = [this, id, a, b]() {
      accumulate(a, nodes_[id].grad);
      if (nodes_[b].needs_grad) nodes_[b].grad -= nodes_[id].grad;
    };
    return id;
  }

  NodeId scale(NodeId a, double c) {
    const NodeId id = push("scale", value(a) * c, any_grad({a}), {a}, nullptr);
    nodes_[id].backprop = [this, id, a, c]() { accumulate(a, nodes_[id].grad * c); };
    return id;
  }

  NodeId add_scalar(NodeId a, double c) {
    const NodeId id =
        push("add_scalar", (value(a).array() + c).matrix(), any_grad({a}), {a}, nullptr);
    nodes_[id].backprop = [this, id, a]() { accumulate(a, nodes_[id].grad); };
    return id;
  }

  NodeId hadamard(NodeId a, NodeId b) {
    same_shape("hadamard", a, b);
    const NodeId id =
        push("hadamard", value(a).cwiseProduct(value(b)), any_grad({a, b}), {a, b}, nullptr);
    nodes_[id].backprop = [this, id, a, b]() {
      if (nodes_[a].needs_grad) nodes_[a].grad += nodes_[id].grad.cwiseProduct(nodes_[b].value);
      if (nodes_[b].needs_grad) nodes_[b].grad += nodes_[id].grad.cwiseProduct(nodes_[a].value);
    };
    return id;
  }

  NodeId square(NodeId a) {
    const NodeId id = push("square", value(a).cwiseProduct(value(a)), any_grad({a}), {a}, nullptr);
    nodes_[id].backprop = [this, id, a]() {
      if (nodes_[a].needs_grad)
        nodes_[a].grad += 2.0 * nodes_[id].grad.cwiseProduct(nodes_[a].value);
    };
    return id;
  }

  NodeId matmul(NodeId a, NodeId b) {
    if (value(a).cols() != value(b).rows())
      throw shape_error("matmul: inner dimensions disagree: " + shape_str(a) + " vs " +
                        shape_str(b));
    const NodeId id = push("matmul", value(a) * value(b), any_grad({a, b}), {a, b}, nullptr);
    nodes_[id].backprop = [this, id, a, b]() {
      if (nodes_[a].needs_grad) nodes_[a].grad += nodes_[id].grad * nodes_[b].value.transpose();
      if (nodes_[b].needs_grad) nodes_[b].grad += nodes_[a].value.transpose() * nodes_[id].grad;
    };
    return id;
  }

  // y = x*W + 1*b  with x:[T x din], W:[din x dout], b:[1 x dout]
  NodeId dense(NodeId x, NodeId W, NodeId b) {
    if (value(x).cols() != value(W).rows())
      throw shape_error("dense: input width " + std::to_string(value(x).cols()) +
                        " does not match weight rows " + std::to_string(value(W).rows()));
    if (value(b).rows() != 1 || value(b).cols() != value(W).cols())
      throw shape_error("dense: bias must be [1 x dout]");
    Mat y = value(x) * value(W);
    y.rowwise() += value(b).row(0);
    const NodeId id = push("dense", std::move(y), any_grad({x, W, b}), {x, W, b}, nullptr);
    nodes_[id].backprop = [this, id, x, W, b]() {
      const Mat& dy = nodes_[id].grad;
      if (nodes_[x].needs_grad) nodes_[x].grad += dy * nodes_[W].value.transpose();
      if (nodes_[W].needs_grad) nodes_[W].grad += nodes_[x].value.transpose() * dy;
      if (nodes_[b].needs_grad) nodes_[b].grad += dy.colwise().sum();
    };
    return id;
  }

  NodeId tanh_(NodeId a) {
    const NodeId id =
        push("tanh", value(a).array().tanh().matrix(), any_grad({a}), {a}, nullptr);
    nodes_[id].backprop = [this, id, a]() {
      if (nodes_[a].needs_grad)
        nodes_[a].grad.array() +=
            nodes_[id].grad.array() * (1.0 - nodes_[id].value.array().square());
    };
    return id;
  }

  NodeId sigmoid_(NodeId a) {
    Mat y = (1.0 / (1.0 + (-value(a).array()).exp())).matrix();
    const NodeId id = push("sigmoid", std::move(y), any_grad({a}), {a}, nullptr);
    nodes_[id].backprop = [this, id, a]() {
      if (nodes_[a].needs_grad)
        nodes_[a].grad.array() += nodes_[id].grad.array() * nodes_[id].value.array() *
                                  (1.0 - nodes_[id].value.array());
    };
    return id;
  }

  NodeId relu_(NodeId a) {
    const NodeId id = push("relu", value(a).cwiseMax(0.0), any_grad({a}), {a}, nullptr);
    nodes_[id].backprop = [this, id, a]() {
      if (nodes_[a].needs_grad)
        nodes_[a].grad.array() +=
            nodes_[id].grad.array() * (nodes_[a].value.array() > 0.0).cast<double>();
    };
    return id;
  }

  NodeId concat_cols(NodeId a, NodeId b) {
    if (value(a).rows() != value(b).rows())
      throw shape_error("concat_cols: row counts disagree: " + shape_str(a) + " vs " +
                        shape_str(b));
    Mat y(value(a).rows(), value(a).cols() + value(b).cols());
    y << value(a), value(b);
    const NodeId id = push("concat_cols", std::move(y), any_grad({a, b}), {a, b}, nullptr);
    nodes_[id].backprop = [this, id, a, b]() {
      const long ca = nodes_[a].value.cols();
      const long cb = nodes_[b].value.cols();
      if (nodes_[a].needs_grad) nodes_[a].grad += nodes_[id].grad.leftCols(ca);
      if (nodes_[b].needs_grad) nodes_[b].grad += nodes_[id].grad.rightCols(cb);
    };
    return id;
  }

  // elementwise mean of same-shaped tensors
  NodeId mean_many(const std::vector<NodeId>& xs) {
    if (xs.empty()) throw shape_error("mean_many: empty input list");
    for (NodeId x : xs) same_shape("mean_many", xs[0], x);
    Mat y = Mat::Zero(value(xs[0]).rows(), value(xs[0]).cols());
    for (NodeId x : xs) y += value(x);
    y /= static_cast<double>(xs.size());
    const NodeId id = push("mean_many", std::move(y), any_grad(xs), xs, nullptr);
    std::vector<NodeId> parents = xs;
    nodes_[id].backprop = [this, id, parents]() {
      const double inv = 1.0 / static_cast<double>(parents.size());
      for (NodeId x : parents) accumulate(x, nodes_[id].grad * inv);
    };
    return id;
  }

  NodeId sum_many(const std::vector<NodeId>& xs) {
    if (xs.empty()) throw shape_error("sum_many: empty input list");
    for (NodeId x : xs) same_shape("sum_many", xs[0], x);
    Mat y = Mat::Zero(value(xs[0]).rows(), value(xs[0]).cols());
    for (NodeId x : xs) y += value(x);
    const NodeId id = push("sum_many", std::move(y), any_grad(xs), xs, nullptr);
    std::vector<NodeId> parents = xs;
    nodes_[id].backprop = [this, id, parents]() {
      for (NodeId x : parents) accumulate(x, nodes_[id].grad);
    };
    return id;
  }

  // scalar mean over every entry
  NodeId mean_all(NodeId a) {
    Mat y(1, 1);
    y(0, 0) = value(a).mean();
    const NodeId id = push("mean_all", std::move(y), any_grad({a}), {a}, nullptr);
    nodes_[id].backprop = [this, id, a]() {
      if (nodes_[a].needs_grad) {
        const double d =
            nodes_[id].grad(0, 0) / static_cast<double>(nodes_[a].value.size());
        nodes_[a].grad.array() += d;
      }
    };
    return id;
  }

  // mean over the selected rows of a [T x 1] column; returns 0 when nothing
  // is selected (callers drop such terms from their pair averages)
  NodeId masked_mean_rows(NodeId a, const std::vector<char>& mask) {
    if (value(a).cols() != 1 || static_cast<long>(mask.size()) != value(a).rows())
      throw shape_error("masked_mean_rows: expects [T x 1] input and a mask of length T");
    long count = 0;
    double sum = 0.0;
    for (long t = 0; t < value(a).rows(); ++t)
      if (mask[static_cast<std::size_t>(t)]) {
        sum += value(a)(t, 0);
        ++count;
      }
    Mat y(1, 1);
    y(0, 0) = count > 0 ? sum / static_cast<double>(count) : 0.0;
    const NodeId id = push("masked_mean_rows", std::move(y), any_grad({a}), {a}, nullptr);
    std::vector<char> m = mask;
    nodes_[id].backprop = [this, id, a, m, count]() {
      if (!nodes_[a].needs_grad || count == 0) return;
      const double d = nodes_[id].grad(0, 0) / static_cast<double>(count);
      for (long t = 0; t < nodes_[a].value.rows(); ++t)
        if (m[static_cast<std::size_t>(t)]) nodes_[a].grad(t, 0) += d;
    };
    return id;
  }

  // Per-row cosine similarity between [T x d] operands -> [T x 1].
  // Rows where either norm is below kSilentNorm yield 0 with zero gradient.
  NodeId row_cosine(NodeId a, NodeId b) {
    same_shape("row_cosine", a, b);
    const long T = value(a).rows();
    Mat y(T, 1);
    for (long t = 0; t < T; ++t) {
      const double p = value(a).row(t).norm();
      const double q = value(b).row(t).norm();
      y(t, 0) = (p < kSilentNorm || q < kSilentNorm)
                    ? 0.0
                    : value(a).row(t).dot(value(b).row(t)) / (p * q);
    }
    const NodeId id = push("row_cosine", std::move(y), any_grad({a, b}), {a, b}, nullptr);
    nodes_[id].backprop = [this, id, a, b]() {
      const Mat& A = nodes_[a].value;
      const Mat& B = nodes_[b].value;
      for (long t = 0; t < A.rows(); ++t) {
        const double p = A.row(t).norm();
        const double q = B.row(t).norm();
        if (p < kSilentNorm || q < kSilentNorm) continue;
        const double c = nodes_[id].value(t, 0);
        const double d = nodes_[id].grad(t, 0);
        if (nodes_[a].needs_grad)
          nodes_[a].grad.row(t) += d * (B.row(t) / (p * q) - c * A.row(t) / (p * p));
        if (nodes_[b].needs_grad)
          nodes_[b].grad.row(t) += d * (A.row(t) / (p * q) - c * B.row(t) / (q * q));
      }
    };
    return id;
  }

  // Marks rows whose vector norm is below the silence threshold.
  std::vector<char> nonsilent_rows(NodeId a) const {
    std::vector<char> m(static_cast<std::size_t>(value(a).rows()));
    for (long t = 0; t < value(a).rows(); ++t)
      m[static_cast<std::size_t>(t)] = value(a).row(t).norm() >= kSilentNorm ? 1 : 0;
    return m;
  }

  // Runs the tape backwards from a scalar root. Gradients of parameter nodes
  // land in their Tensor's grad buffer (additively).
  void backward(NodeId root) {
    if (value(root).rows() != 1 || value(root).cols() != 1)
      throw shape_error("backward: root must be a 1x1 scalar");
    for (NodeId i = 0; i <= root; ++i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.needs_grad) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    }
    if (!nodes_[static_cast<std::size_t>(root)].needs_grad) return;  // no parameters involved
    nodes_[static_cast<std::size_t>(root)].grad(0, 0) = 1.0;
    for (NodeId i = root; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.needs_grad && n.backprop) n.backprop();
    }
  }

  // ---- fused bidirectional LSTM (declared here, defined below) ----
  struct LstmDir;
  NodeId lstm_dir(NodeId x, LstmDir& p, bool reverse_time);
  NodeId bilstm(NodeId x, LstmDir& fwd, LstmDir& bwd);

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    std::function<void()> backprop;
    const char* op = "";
  };

  NodeId check(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw shape_error("invalid node id " + std::to_string(id));
    return id;
  }

  bool any_grad(const std::vector<NodeId>& ids) const {
    for (NodeId i : ids)
      if (nodes_[check(i)].needs_grad) return true;
    return false;
  }

  void same_shape(const char* op, NodeId a, NodeId b) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
      throw shape_error(std::string(op) + ": shapes disagree: " + shape_str(a) + " vs " +
                        shape_str(b));
  }

  std::string shape_str(NodeId a) const {
    return std::to_string(value(a).rows()) + "x" + std::to_string(value(a).cols());
  }

  void accumulate(NodeId target, const Mat& g) {
    if (nodes_[static_cast<std::size_t>(target)].needs_grad)
      nodes_[static_cast<std::size_t>(target)].grad += g;
  }

  NodeId push(const char* op, Mat value, bool needs_grad, const std::vector<NodeId>& parents,
              std::function<void()> backprop) {
    (void)parents;
    if (!value.allFinite()) throw numeric_error(std::string("non-finite value produced by op ") + op);
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.backprop = std::move(backprop);
    n.op = op;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// LSTM. One direction holds Wx:[din x 4h], Wh:[h x 4h], b:[1 x 4h] with gate
// columns ordered (input, forget, cell, output).
// ---------------------------------------------------------------------------

struct Graph::LstmDir {
  Tensor Wx, Wh, b;

  LstmDir() = default;
  LstmDir(const std::string& prefix, long din, long hidden)
      : Wx(prefix + ".Wx", din, 4 * hidden),
        Wh(prefix + ".Wh", hidden, 4 * hidden),
        b(prefix + ".b", 1, 4 * hidden) {}

  long hidden() const { return Wh.value.rows(); }
  long input_dim() const { return Wx.value.rows(); }
};

inline Graph::NodeId Graph::lstm_dir(NodeId x, LstmDir& p, bool reverse_time) {
  const long T = value(x).rows();
  const long din = value(x).cols();
  const long h = p.hidden();
  if (T < 1) throw shape_error("lstm: sequence must have at least one frame");
  if (din != p.input_dim())
    throw shape_error("lstm: input width " + std::to_string(din) + " does not match Wx rows " +
                      std::to_string(p.input_dim()));
  if (p.Wh.value.cols() != 4 * h || p.Wx.value.cols() != 4 * h || p.b.value.cols() != 4 * h)
    throw shape_error("lstm: gate blocks must be 4*hidden wide");

  struct Cache {
    Mat X;                    // time-ordered input actually consumed
    Mat I, F, G, O, C, TC;    // [T x h] each
    Mat H;                    // [T x h]
  };
  auto cache = std::make_shared<Cache>();

  cache->X.resize(T, din);
  for (long t = 0; t < T; ++t)
    cache->X.row(t) = reverse_time ? value(x).row(T - 1 - t) : value(x).row(t);

  const Mat xw = cache->X * p.Wx.value;  // [T x 4h], batched input projection
  cache->I.resize(T, h);
  cache->F.resize(T, h);
  cache->G.resize(T, h);
  cache->O.resize(T, h);
  cache->C.resize(T, h);
  cache->TC.resize(T, h);
  cache->H.resize(T, h);

  Eigen::RowVectorXd hprev = Eigen::RowVectorXd::Zero(h);
  Eigen::RowVectorXd cprev = Eigen::RowVectorXd::Zero(h);
  for (long t = 0; t < T; ++t) {
    Eigen::RowVectorXd z = xw.row(t) + hprev * p.Wh.value + p.b.value.row(0);
    const auto zi = z.segment(0, h).array();
    const auto zf = z.segment(h, h).array();
    const auto zg = z.segment(2 * h, h).array();
    const auto zo = z.segment(3 * h, h).array();
    cache->I.row(t) = (1.0 / (1.0 + (-zi).exp())).matrix();
    cache->F.row(t) = (1.0 / (1.0 + (-zf).exp())).matrix();
    cache->G.row(t) = zg.tanh().matrix();
    cache->O.row(t) = (1.0 / (1.0 + (-zo).exp())).matrix();
    cache->C.row(t) = cache->F.row(t).cwiseProduct(cprev) +
                      cache->I.row(t).cwiseProduct(cache->G.row(t));
    cache->TC.row(t) = cache->C.row(t).array().tanh().matrix();
    cache->H.row(t) = cache->O.row(t).cwiseProduct(cache->TC.row(t));
    hprev = cache->H.row(t);
    cprev = cache->C.row(t);
  }

  Mat out(T, h);
  for (long t = 0; t < T; ++t) out.row(t) = reverse_time ? cache->H.row(T - 1 - t) : cache->H.row(t);

  // parameters always require gradients, so the output does too
  const NodeId id = push("lstm", std::move(out), true, {x}, nullptr);
  LstmDir* pp = &p;
  nodes_[id].backprop = [this, id, x, pp, cache, reverse_time, T, h]() {
    // reorder incoming gradient into the consumed time order
    Mat dH(T, h);
    for (long t = 0; t < T; ++t)
      dH.row(t) = reverse_time ? nodes_[id].grad.row(T - 1 - t) : nodes_[id].grad.row(t);

    Mat dZ(T, 4 * h);
    Eigen::RowVectorXd dh_next = Eigen::RowVectorXd::Zero(h);
    Eigen::RowVectorXd dc_next = Eigen::RowVectorXd::Zero(h);
    const Mat WhT = pp->Wh.value.transpose();
    for (long t = T - 1; t >= 0; --t) {
      const Eigen::RowVectorXd dh = dH.row(t) + dh_next;
      const auto o = cache->O.row(t).array();
      const auto tc = cache->TC.row(t).array();
      const auto i = cache->I.row(t).array();
      const auto f = cache->F.row(t).array();
      const auto g = cache->G.row(t).array();
      const Eigen::ArrayXd cm1 = (t > 0) ? cache->C.row(t - 1).transpose().array()
                                         : Eigen::ArrayXd::Zero(h);
      const auto dov = dh.array() * tc;
      const Eigen::ArrayXd dc =
          dc_next.transpose().array() + dh.transpose().array() * o.transpose() *
                                            (1.0 - tc.transpose().square());
      const auto div = dc * g.transpose();
      const auto dgv = dc * i.transpose();
      const auto dfv = dc * cm1;
      dc_next = (dc * f.transpose()).matrix().transpose();

      dZ.row(t).segment(0, h) =
          (div * i.transpose() * (1.0 - i.transpose())).matrix().transpose();
      dZ.row(t).segment(h, h) =
          (dfv * f.transpose() * (1.0 - f.transpose())).matrix().transpose();
      dZ.row(t).segment(2 * h, h) = (dgv * (1.0 - g.transpose().square())).matrix().transpose();
      dZ.row(t).segment(3 * h, h) = (dov * o * (1.0 - o)).matrix();
      dh_next = dZ.row(t) * WhT;
    }

    pp->Wx.grad += cache->X.transpose() * dZ;
    for (long t = 1; t < T; ++t) pp->Wh.grad += cache->H.row(t - 1).transpose() * dZ.row(t);
    pp->b.grad += dZ.colwise().sum();

    if (nodes_[x].needs_grad) {
      const Mat dX = dZ * pp->Wx.value.transpose();
      for (long t = 0; t < T; ++t)
        nodes_[x].grad.row(reverse_time ? T - 1 - t : t) += dX.row(t);
    }
  };
  return id;
}

inline Graph::NodeId Graph::bilstm(NodeId x, LstmDir& fwd, LstmDir& bwd) {
  const NodeId a = lstm_dir(x, fwd, false);
  const NodeId b = lstm_dir(x, bwd, true);
  return concat_cols(a, b);
}

// ---------------------------------------------------------------------------
// Adam with L2 weight decay folded into the gradient.
// ---------------------------------------------------------------------------

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
  long step = 0;
  std::vector<Mat> m, v;

  void init(const std::vector<Tensor*>& params) {
    m.clear();
    v.clear();
    for (auto* p : params) {
      m.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
      v.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
    step = 0;
  }
};

// Returns the global gradient norm before clipping.
inline double clip_grad_norm(const std::vector<Tensor*>& params, double max_norm) {
  double sq = 0.0;
  for (auto* p : params) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto* p : params) p->grad *= s;
  }
  return norm;
}

inline void adam_step(AdamState& state, const std::vector<Tensor*>& params) {
  if (state.m.size() != params.size()) throw shape_error("adam_step: state/params size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->grad.allFinite())
      throw numeric_error("adam_step: non-finite gradient in parameter '" + params[i]->name + "'");
    if (params[i]->grad.rows() != params[i]->value.rows() ||
        params[i]->grad.cols() != params[i]->value.cols())
      throw shape_error("adam_step: gradient shape mismatch in '" + params[i]->name + "'");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Mat g = p.grad + state.weight_decay * p.value;
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g.cwiseProduct(g);
    const Mat mhat = state.m[i] / bc1;
    const Mat vhat = state.v[i] / bc2;
    p.value.array() -= state.lr * mhat.array() / (vhat.array().sqrt() + state.eps);
  }
}

// ---------------------------------------------------------------------------
// Central finite-difference gradient checker. The loss closure must be
// deterministic; with_grad=true it must also accumulate analytic gradients
// into the parameter tensors.
// ---------------------------------------------------------------------------

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  long coords_checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> per_tensor;
  double max_rel_err = 0.0;

  const GradCheckEntry& worst() const {
    std::size_t w = 0;
    for (std::size_t i = 1; i < per_tensor.size(); ++i)
      if (per_tensor[i].max_rel_err > per_tensor[w].max_rel_err) w = i;
    return per_tensor[w];
  }
};

inline GradCheckReport grad_check(const std::function<double(bool with_grad)>& loss_fn,
                                  const std::vector<Tensor*>& params, double eps = 1e-5,
                                  long max_coords_per_tensor = 200, std::uint64_t seed = 0) {
  zero_grads(params);
  loss_fn(true);
  std::vector<Mat> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(p->grad);

  GradCheckReport report;
  auto rng = make_rng(seed, 0x67726164);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    const long total = static_cast<long>(p.value.size());
    std::vector<long> coords;
    if (total <= max_coords_per_tensor) {
      coords.resize(static_cast<std::size_t>(total));
      for (long i = 0; i < total; ++i) coords[static_cast<std::size_t>(i)] = i;
    } else {
      std::uniform_int_distribution<long> pick(0, total - 1);
      std::vector<char> seen(static_cast<std::size_t>(total), 0);
      while (static_cast<long>(coords.size()) < max_coords_per_tensor) {
        const long c = pick(rng);
        if (!seen[static_cast<std::size_t>(c)]) {
          seen[static_cast<std::size_t>(c)] = 1;
          coords.push_back(c);
        }
      }
    }

    GradCheckEntry entry;
    entry.name = p.name;
    entry.coords_checked = static_cast<long>(coords.size());
    for (long c : coords) {
      double* slot = p.value.data() + c;
      const double saved = *slot;
      *slot = saved + eps;
      const double lp = loss_fn(false);
      *slot = saved - eps;
      const double lm = loss_fn(false);
      *slot = saved;
      const double numeric = (lp - lm) / (2.0 * eps);
      const double a = analytic[pi].data()[c];
      const double rel = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), 1e-8});
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.per_tensor.push_back(std::move(entry));
  }
  return report;
}

}  // namespace fiss::nn

#endif  // FISS_NN_HPP
