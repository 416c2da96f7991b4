// tensor.cpp

// Copyright 2026  dlra authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "dlra/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "dlra/error.hpp"

namespace dlra {

namespace {

constexpr double kCosClamp = 1.0 - 1e-7;

void check_2d(const Tensor &t, const char *op, const char *role) {
  if (t.shape().size() != 2) {
    throw DimensionError(std::string(op) + ": " + role +
                         " must be 2-D, got shape " +
                         shape_to_string(t.shape()));
  }
}

}  // namespace

std::string shape_to_string(const Shape &shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

std::size_t shape_numel(const Shape &shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("non-positive dimension in shape " +
                                     shape_to_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

// --- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->values.assign(n, 0.0);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.impl_->values.begin(), t.impl_->values.end(), value);
  return t;
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values,
                           bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("from_values: shape " + shape_to_string(shape) +
                         " does not match " + std::to_string(values.size()) +
                         " values");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from_values({1}, {value}); }

const Shape &Tensor::shape() const { return impl_->shape; }

int Tensor::dim(int axis) const { return impl_->shape.at(axis); }

std::size_t Tensor::size() const { return impl_->values.size(); }

std::span<const double> Tensor::values() const { return impl_->values; }

std::span<double> Tensor::values_mut() { return impl_->values; }

double Tensor::value() const {
  if (size() != 1) {
    throw DimensionError("value(): tensor of shape " +
                         shape_to_string(shape()) + " is not a scalar");
  }
  return impl_->values[0];
}

double Tensor::at(int row, int col) const {
  check_2d(*this, "at", "tensor");
  return impl_->values[static_cast<std::size_t>(row) *
                           static_cast<std::size_t>(dim(1)) +
                       static_cast<std::size_t>(col)];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) {
    throw Error("grad(): no gradient populated for this tensor");
  }
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

bool Tensor::is_leaf() const { return impl_ && impl_->producer == nullptr; }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != size()) {
    throw DimensionError("reshaped: cannot view shape " +
                         shape_to_string(this->shape()) + " as " +
                         shape_to_string(shape));
  }
  return from_values(std::move(shape),
                     std::vector<double>(impl_->values.begin(),
                                         impl_->values.end()),
                     false);
}

bool participates_in_grad(const Tensor &t) {
  return t.defined() && (t.requires_grad() || !t.is_leaf());
}

/// Internal factory: creates the output tensor and records the op node when
/// any input participates in differentiation.
Tensor make_op_output(const char *name, Shape shape,
                      std::vector<double> values, std::vector<Tensor> inputs,
                      std::function<void(const double *, GradTable &)>
                          backward) {
  Tensor out = Tensor::from_values(std::move(shape), std::move(values));
  bool record = false;
  for (const Tensor &in : inputs) {
    if (participates_in_grad(in)) {
      record = true;
      break;
    }
  }
  if (record) {
    auto node = std::make_shared<detail::OpNode>();
    node->name = name;
    node->inputs = std::move(inputs);
    node->output = out.impl();
    node->backward = std::move(backward);
    out.impl()->producer = std::move(node);
  }
  return out;
}

// --- GradTable -------------------------------------------------------------

double *GradTable::sink(const Tensor &t) {
  if (!t.defined()) return nullptr;
  detail::TensorImpl *impl = t.impl().get();
  if (impl->requires_grad) {
    if (impl->grad.empty()) impl->grad.assign(impl->values.size(), 0.0);
    return impl->grad.data();
  }
  if (impl->producer) {
    auto &buf = scratch_[impl];
    if (buf.empty()) buf.assign(impl->values.size(), 0.0);
    return buf.data();
  }
  return nullptr;
}

const double *GradTable::grad_of(const detail::TensorImpl *out) const {
  auto it = scratch_.find(out);
  if (it == scratch_.end()) return nullptr;
  return it->second.data();
}

void GradTable::seed(const detail::TensorImpl *root,
                     std::vector<double> seed_values) {
  scratch_[root] = std::move(seed_values);
}

// --- ComputeGraph -----------------------------------------------------------

ComputeGraph ComputeGraph::from(const Tensor &root) {
  ComputeGraph g;
  g.root_ = root;
  if (!root.defined() || root.is_leaf()) return g;

  // Iterative post-order DFS: a node is appended after all producers of its
  // inputs, giving a topological order.
  struct Frame {
    detail::OpNode *node;
    std::size_t next_input;
  };
  std::unordered_set<const detail::OpNode *> visited;
  std::vector<Frame> stack;
  detail::OpNode *root_node = root.impl()->producer.get();
  visited.insert(root_node);
  stack.push_back({root_node, 0});
  while (!stack.empty()) {
    Frame &f = stack.back();
    if (f.next_input < f.node->inputs.size()) {
      const Tensor &in = f.node->inputs[f.next_input++];
      detail::OpNode *producer =
          in.defined() ? in.impl()->producer.get() : nullptr;
      if (producer && !visited.count(producer)) {
        visited.insert(producer);
        stack.push_back({producer, 0});
      }
    } else {
      // Find the shared_ptr owner: the node is owned by its output impl.
      auto out = f.node->output.lock();
      g.nodes_.push_back(out->producer);
      stack.pop_back();
    }
  }
  return g;
}

bool ComputeGraph::topologically_ordered() const {
  std::unordered_set<const detail::OpNode *> seen;
  for (const auto &node : nodes_) {
    for (const Tensor &in : node->inputs) {
      if (!in.defined() || in.is_leaf()) continue;
      if (!seen.count(in.impl()->producer.get())) return false;
    }
    seen.insert(node.get());
  }
  return true;
}

void ComputeGraph::run_backward(std::vector<double> seed_values) {
  if (nodes_.empty()) {
    // Root is a leaf: seed accumulates directly when trainable.
    if (root_.defined() && root_.requires_grad()) {
      auto *impl = root_.impl().get();
      if (impl->grad.empty()) impl->grad.assign(impl->values.size(), 0.0);
      for (std::size_t i = 0; i < seed_values.size(); ++i)
        impl->grad[i] += seed_values[i];
    }
    return;
  }
  GradTable table;
  table.seed(root_.impl().get(), std::move(seed_values));
  // Reverse topological order: every node sees its output gradient complete.
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::OpNode *node = it->get();
    auto out = node->output.lock();
    const double *gout = table.grad_of(out.get());
    if (gout == nullptr) continue;  // no gradient reached this node
    node->backward(gout, table);
  }
}

void backward(const Tensor &loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw DimensionError(
        "backward: loss must be a scalar, got shape " +
        (loss.defined() ? shape_to_string(loss.shape()) : "<undefined>"));
  }
  ComputeGraph::from(loss).run_backward({1.0});
}

// --- Operations -------------------------------------------------------------

Tensor linear(const Tensor &x, const Tensor &weight, const Tensor &bias) {
  check_2d(x, "linear", "input");
  check_2d(weight, "linear", "weight");
  const int n = x.dim(0), d_in = x.dim(1);
  const int d_out = weight.dim(0);
  if (weight.dim(1) != d_in) {
    throw DimensionError("linear: input shape " + shape_to_string(x.shape()) +
                         " incompatible with weight shape " +
                         shape_to_string(weight.shape()));
  }
  if (bias.defined() &&
      (bias.shape().size() != 1 || bias.dim(0) != d_out)) {
    throw DimensionError("linear: bias shape " +
                         shape_to_string(bias.shape()) +
                         " incompatible with weight shape " +
                         shape_to_string(weight.shape()));
  }

  const double *xv = x.values().data();
  const double *wv = weight.values().data();
  std::vector<double> out(static_cast<std::size_t>(n) * d_out);
  for (int i = 0; i < n; ++i) {
    const double *xi = xv + static_cast<std::size_t>(i) * d_in;
    double *oi = out.data() + static_cast<std::size_t>(i) * d_out;
    for (int j = 0; j < d_out; ++j) {
      const double *wj = wv + static_cast<std::size_t>(j) * d_in;
      double acc = 0.0;
      for (int k = 0; k < d_in; ++k) acc += wj[k] * xi[k];
      oi[j] = acc;
    }
  }
  if (bias.defined()) {
    const double *bv = bias.values().data();
    for (int i = 0; i < n; ++i) {
      double *oi = out.data() + static_cast<std::size_t>(i) * d_out;
      for (int j = 0; j < d_out; ++j) oi[j] += bv[j];
    }
  }

  Tensor xc = x, wc = weight, bc = bias;
  auto bw = [xc, wc, bc, n, d_in, d_out](const double *gout, GradTable &t) {
    if (double *gx = t.sink(xc)) {
      const double *wv = wc.values().data();
      for (int i = 0; i < n; ++i) {
        const double *gi = gout + static_cast<std::size_t>(i) * d_out;
        double *gxi = gx + static_cast<std::size_t>(i) * d_in;
        for (int j = 0; j < d_out; ++j) {
          const double g = gi[j];
          const double *wj = wv + static_cast<std::size_t>(j) * d_in;
          for (int k = 0; k < d_in; ++k) gxi[k] += g * wj[k];
        }
      }
    }
    if (double *gw = t.sink(wc)) {
      const double *xv = xc.values().data();
      for (int i = 0; i < n; ++i) {
        const double *gi = gout + static_cast<std::size_t>(i) * d_out;
        const double *xi = xv + static_cast<std::size_t>(i) * d_in;
        for (int j = 0; j < d_out; ++j) {
          const double g = gi[j];
          double *gwj = gw + static_cast<std::size_t>(j) * d_in;
          for (int k = 0; k < d_in; ++k) gwj[k] += g * xi[k];
        }
      }
    }
    if (bc.defined()) {
      if (double *gb = t.sink(bc)) {
        for (int i = 0; i < n; ++i) {
          const double *gi = gout + static_cast<std::size_t>(i) * d_out;
          for (int j = 0; j < d_out; ++j) gb[j] += gi[j];
        }
      }
    }
  };

  std::vector<Tensor> inputs = {x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_op_output("linear", {n, d_out}, std::move(out),
                        std::move(inputs), std::move(bw));
}

Tensor relu(const Tensor &x) {
  std::vector<double> out(x.size());
  const double *xv = x.values().data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  Tensor xc = x;
  auto bw = [xc](const double *gout, GradTable &t) {
    if (double *gx = t.sink(xc)) {
      const double *xv = xc.values().data();
      for (std::size_t i = 0; i < xc.size(); ++i)
        if (xv[i] > 0.0) gx[i] += gout[i];
    }
  };
  return make_op_output("relu", x.shape(), std::move(out), {x}, std::move(bw));
}

Tensor l2_normalize(const Tensor &x, double eps) {
  check_2d(x, "l2_normalize", "input");
  if (!(eps > 0.0)) throw Error("l2_normalize: eps must be positive");
  const int n = x.dim(0), d = x.dim(1);
  const double *xv = x.values().data();
  std::vector<double> out(x.size());
  std::vector<double> denoms(n);
  for (int i = 0; i < n; ++i) {
    const double *xi = xv + static_cast<std::size_t>(i) * d;
    double sq = 0.0;
    for (int k = 0; k < d; ++k) sq += xi[k] * xi[k];
    const double norm = std::sqrt(sq);
    const double denom = std::max(norm, eps);
    denoms[i] = denom;
    double *oi = out.data() + static_cast<std::size_t>(i) * d;
    for (int k = 0; k < d; ++k) oi[k] = xi[k] / denom;
  }
  Tensor xc = x;
  std::vector<double> saved_out = out;  // forward context for the backward
  auto bw = [xc, saved_out, denoms, n, d, eps](const double *gout,
                                               GradTable &t) {
    if (double *gx = t.sink(xc)) {
      const double *ov = saved_out.data();
      for (int i = 0; i < n; ++i) {
        const double *gi = gout + static_cast<std::size_t>(i) * d;
        const double *oi = ov + static_cast<std::size_t>(i) * d;
        double *gxi = gx + static_cast<std::size_t>(i) * d;
        const double denom = denoms[i];
        if (denom > eps) {
          // out = x/||x||: J^T g = (g - (out . g) out) / ||x||
          double dot = 0.0;
          for (int k = 0; k < d; ++k) dot += oi[k] * gi[k];
          for (int k = 0; k < d; ++k)
            gxi[k] += (gi[k] - dot * oi[k]) / denom;
        } else {
          // Constant divisor eps.
          for (int k = 0; k < d; ++k) gxi[k] += gi[k] / eps;
        }
      }
    }
  };
  return make_op_output("l2_normalize", x.shape(), std::move(out), {x},
                        std::move(bw));
}

Tensor softmax_cross_entropy(const Tensor &logits,
                             std::span<const int> targets) {
  check_2d(logits, "softmax_cross_entropy", "logits");
  const int n = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(targets.size()) != n) {
    throw DimensionError(
        "softmax_cross_entropy: " + std::to_string(targets.size()) +
        " targets for " + std::to_string(n) + " rows");
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  for (int i = 0; i < n; ++i) {
    if (tgt[i] < 0 || tgt[i] >= c) {
      throw IndexError("softmax_cross_entropy: target " +
                       std::to_string(tgt[i]) + " at row " +
                       std::to_string(i) + " out of range [0, " +
                       std::to_string(c) + ")");
    }
  }
  const double *lv = logits.values().data();
  std::vector<double> softmax(logits.size());
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double *li = lv + static_cast<std::size_t>(i) * c;
    double *si = softmax.data() + static_cast<std::size_t>(i) * c;
    double mx = li[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, li[j]);
    double denom = 0.0;
    for (int j = 0; j < c; ++j) {
      si[j] = std::exp(li[j] - mx);
      denom += si[j];
    }
    for (int j = 0; j < c; ++j) si[j] /= denom;
    loss += std::log(denom) - (li[tgt[i]] - mx);
  }
  loss /= n;

  Tensor lc = logits;
  auto bw = [lc, softmax, tgt, n, c](const double *gout, GradTable &t) {
    if (double *gl = t.sink(lc)) {
      const double g = gout[0] / n;
      for (int i = 0; i < n; ++i) {
        const double *si = softmax.data() + static_cast<std::size_t>(i) * c;
        double *gi = gl + static_cast<std::size_t>(i) * c;
        for (int j = 0; j < c; ++j) gi[j] += g * si[j];
        gi[tgt[i]] -= g;
      }
    }
  };
  return make_op_output("softmax_cross_entropy", {1}, {loss}, {logits},
                        std::move(bw));
}

Tensor add(const Tensor &a, const Tensor &b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shape " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
  std::vector<double> out(a.size());
  const double *av = a.values().data(), *bv = b.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  Tensor ac = a, bc = b;
  auto bw = [ac, bc](const double *gout, GradTable &t) {
    if (double *ga = t.sink(ac))
      for (std::size_t i = 0; i < ac.size(); ++i) ga[i] += gout[i];
    if (double *gb = t.sink(bc))
      for (std::size_t i = 0; i < bc.size(); ++i) gb[i] += gout[i];
  };
  return make_op_output("add", a.shape(), std::move(out), {a, b},
                        std::move(bw));
}

Tensor mul(const Tensor &a, const Tensor &b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shape " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
  std::vector<double> out(a.size());
  const double *av = a.values().data(), *bv = b.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Tensor ac = a, bc = b;
  auto bw = [ac, bc](const double *gout, GradTable &t) {
    const double *av = ac.values().data(), *bv = bc.values().data();
    if (double *ga = t.sink(ac))
      for (std::size_t i = 0; i < ac.size(); ++i) ga[i] += gout[i] * bv[i];
    if (double *gb = t.sink(bc))
      for (std::size_t i = 0; i < bc.size(); ++i) gb[i] += gout[i] * av[i];
  };
  return make_op_output("mul", a.shape(), std::move(out), {a, b},
                        std::move(bw));
}

Tensor scale(const Tensor &a, double factor) {
  std::vector<double> out(a.size());
  const double *av = a.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * av[i];
  Tensor ac = a;
  auto bw = [ac, factor](const double *gout, GradTable &t) {
    if (double *ga = t.sink(ac))
      for (std::size_t i = 0; i < ac.size(); ++i) ga[i] += factor * gout[i];
  };
  return make_op_output("scale", a.shape(), std::move(out), {a},
                        std::move(bw));
}

Tensor sum(const Tensor &x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Tensor xc = x;
  auto bw = [xc](const double *gout, GradTable &t) {
    if (double *gx = t.sink(xc))
      for (std::size_t i = 0; i < xc.size(); ++i) gx[i] += gout[0];
  };
  return make_op_output("sum", {1}, {acc}, {x}, std::move(bw));
}

Tensor mean_over_groups(const Tensor &x, int group) {
  check_2d(x, "mean_over_groups", "input");
  if (group <= 0 || x.dim(0) % group != 0) {
    throw DimensionError("mean_over_groups: " + std::to_string(x.dim(0)) +
                         " rows not divisible by group " +
                         std::to_string(group));
  }
  const int n = x.dim(0) / group, d = x.dim(1);
  const double *xv = x.values().data();
  std::vector<double> out(static_cast<std::size_t>(n) * d, 0.0);
  for (int u = 0; u < n; ++u) {
    double *ou = out.data() + static_cast<std::size_t>(u) * d;
    for (int r = 0; r < group; ++r) {
      const double *xr =
          xv + (static_cast<std::size_t>(u) * group + r) * d;
      for (int k = 0; k < d; ++k) ou[k] += xr[k];
    }
    for (int k = 0; k < d; ++k) ou[k] /= group;
  }
  Tensor xc = x;
  auto bw = [xc, group, n, d](const double *gout, GradTable &t) {
    if (double *gx = t.sink(xc)) {
      for (int u = 0; u < n; ++u) {
        const double *gu = gout + static_cast<std::size_t>(u) * d;
        for (int r = 0; r < group; ++r) {
          double *gr = gx + (static_cast<std::size_t>(u) * group + r) * d;
          for (int k = 0; k < d; ++k) gr[k] += gu[k] / group;
        }
      }
    }
  };
  return make_op_output("mean_over_groups", {n, d}, std::move(out), {x},
                        std::move(bw));
}

Tensor grad_scaled_identity(const Tensor &x, double factor) {
  std::vector<double> out(x.values().begin(), x.values().end());
  Tensor xc = x;
  auto bw = [xc, factor](const double *gout, GradTable &t) {
    if (double *gx = t.sink(xc))
      for (std::size_t i = 0; i < xc.size(); ++i) gx[i] += factor * gout[i];
  };
  return make_op_output("grad_scaled_identity", x.shape(), std::move(out),
                        {x}, std::move(bw));
}

Tensor group_max(const Tensor &x, int group) {
  check_2d(x, "group_max", "input");
  if (group <= 0 || x.dim(1) % group != 0) {
    throw DimensionError("group_max: " + std::to_string(x.dim(1)) +
                         " columns not divisible by group " +
                         std::to_string(group));
  }
  const int n = x.dim(0), classes = x.dim(1) / group;
  const double *xv = x.values().data();
  std::vector<double> out(static_cast<std::size_t>(n) * classes);
  std::vector<int> argmax(out.size());
  for (int i = 0; i < n; ++i) {
    const double *xi = xv + static_cast<std::size_t>(i) * classes * group;
    for (int cl = 0; cl < classes; ++cl) {
      int best = 0;
      double bv = xi[cl * group];
      for (int k = 1; k < group; ++k) {
        const double v = xi[cl * group + k];
        if (v > bv) {  // strict: first max wins on ties
          bv = v;
          best = k;
        }
      }
      out[static_cast<std::size_t>(i) * classes + cl] = bv;
      argmax[static_cast<std::size_t>(i) * classes + cl] = best;
    }
  }
  Tensor xc = x;
  auto bw = [xc, argmax, n, classes, group](const double *gout,
                                            GradTable &t) {
    if (double *gx = t.sink(xc)) {
      for (int i = 0; i < n; ++i) {
        for (int cl = 0; cl < classes; ++cl) {
          const std::size_t oi = static_cast<std::size_t>(i) * classes + cl;
          gx[static_cast<std::size_t>(i) * classes * group + cl * group +
             argmax[oi]] += gout[oi];
        }
      }
    }
  };
  return make_op_output("group_max", {n, classes}, std::move(out), {x},
                        std::move(bw));
}

Tensor arcmargin_logits(const Tensor &cosines, std::span<const int> labels,
                        double margin, double scale_s) {
  check_2d(cosines, "arcmargin_logits", "cosines");
  const int n = cosines.dim(0), classes = cosines.dim(1);
  if (static_cast<int>(labels.size()) != n) {
    throw DimensionError("arcmargin_logits: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " rows");
  }
  std::vector<int> lab(labels.begin(), labels.end());
  for (int i = 0; i < n; ++i) {
    if (lab[i] < 0 || lab[i] >= classes) {
      throw IndexError("arcmargin_logits: label " + std::to_string(lab[i]) +
                       " out of range [0, " + std::to_string(classes) + ")");
    }
  }
  const double cos_m = std::cos(margin), sin_m = std::sin(margin);
  // theta + m <= pi  <=>  cos(theta) >= cos(pi - m) = -cos(m)
  const double boundary = -cos_m;

  const double *cv = cosines.values().data();
  std::vector<double> out(cosines.size());
  // Per-row saved context: d(target logit)/d(cos) and clamp mask.
  std::vector<double> target_dcos(n);
  for (int i = 0; i < n; ++i) {
    const double *ci = cv + static_cast<std::size_t>(i) * classes;
    double *oi = out.data() + static_cast<std::size_t>(i) * classes;
    for (int cl = 0; cl < classes; ++cl) oi[cl] = scale_s * ci[cl];
    const double raw = ci[lab[i]];
    const double cc = std::clamp(raw, -kCosClamp, kCosClamp);
    const double st = std::sqrt(1.0 - cc * cc);  // sin(theta), in (0, 1]
    double phi, dphi;
    if (cc >= boundary) {
      phi = cc * cos_m - st * sin_m;
      dphi = cos_m + sin_m * cc / st;
    } else {
      // Monotone surrogate past the angular boundary.
      phi = cc - margin * st;
      dphi = 1.0 + margin * cc / st;
    }
    oi[lab[i]] = scale_s * phi;
    const bool clamped = (raw < -kCosClamp || raw > kCosClamp);
    target_dcos[i] = clamped ? 0.0 : scale_s * dphi;
  }

  Tensor cc = cosines;
  auto bw = [cc, lab, target_dcos, n, classes, scale_s](const double *gout,
                                                        GradTable &t) {
    if (double *gc = t.sink(cc)) {
      for (int i = 0; i < n; ++i) {
        const double *gi = gout + static_cast<std::size_t>(i) * classes;
        double *gci = gc + static_cast<std::size_t>(i) * classes;
        for (int cl = 0; cl < classes; ++cl) gci[cl] += scale_s * gi[cl];
        // Replace the target column's plain-scale contribution.
        gci[lab[i]] += (target_dcos[i] - scale_s) * gi[lab[i]];
      }
    }
  };
  return make_op_output("arcmargin_logits", cosines.shape(), std::move(out),
                        {cosines}, std::move(bw));
}

// --- Finite differences -----------------------------------------------------

bool GradCheckReport::all_passed() const {
  for (const auto &e : entries)
    if (e.has_gradient && !e.passed) return false;
  return true;
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  for (const auto &e : entries) {
    char buf[64];
    if (!e.has_gradient) {
      os << e.name << ": no gradient (frozen)\n";
      continue;
    }
    std::snprintf(buf, sizeof(buf), "%.3e", e.max_rel_err);
    os << e.name << ": max rel err " << buf
       << (e.nan_flagged ? " [NaN flagged]" : "")
       << (e.passed ? " ok" : " FAIL") << "\n";
  }
  return os.str();
}

GradCheckReport finite_diff_check(
    const std::function<Tensor()> &f,
    const std::vector<std::pair<std::string, Tensor>> &params, double step,
    double tol) {
  if (!(step > 0.0)) throw Error("finite_diff_check: step must be positive");
  GradCheckReport report;
  report.step = step;
  report.tol = tol;

  // One autodiff pass from clean gradients.
  for (const auto &[name, p] : params) {
    Tensor t = p;
    t.zero_grad();
  }
  Tensor loss = f();
  if (loss.size() != 1)
    throw DimensionError("finite_diff_check: f must return a scalar");
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto &[name, p] : params) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back();
    }
  }

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const auto &[name, pconst] = params[pi];
    GradCheckEntry entry;
    entry.name = name;
    if (!pconst.requires_grad()) {
      entry.has_gradient = false;
      report.entries.push_back(std::move(entry));
      continue;
    }
    Tensor p = pconst;
    const std::vector<double> &ad = analytic[pi];
    std::span<double> vals = p.values_mut();
    for (std::size_t e = 0; e < vals.size(); ++e) {
      const double orig = vals[e];
      vals[e] = orig + step;
      const double fplus = f().value();
      vals[e] = orig - step;
      const double fminus = f().value();
      vals[e] = orig;
      if (std::isnan(fplus) || std::isnan(fminus)) {
        entry.nan_flagged = true;
        entry.passed = false;
        continue;
      }
      const double fd = (fplus - fminus) / (2.0 * step);
      const double a = ad.empty() ? 0.0 : ad[e];
      const double rel =
          std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1.0});
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    entry.passed = entry.passed && entry.max_rel_err <= tol;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace dlra
