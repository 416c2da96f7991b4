// dlra/tensor.hpp

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

#ifndef DLRA_TENSOR_HPP_
#define DLRA_TENSOR_HPP_

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace dlra {

/// Row-major dense shape. All dimensions are positive.
using Shape = std::vector<int>;

std::string shape_to_string(const Shape &shape);
std::size_t shape_numel(const Shape &shape);

class Tensor;
class GradTable;

namespace detail {

struct TensorImpl;

/// One recorded operation of the define-by-run graph. Holds strong
/// references to its inputs (keeping the upstream graph alive) and a weak
/// reference to its output (the consumer, or the caller, owns it).
struct OpNode {
  const char *name;
  std::vector<Tensor> inputs;
  std::weak_ptr<TensorImpl> output;
  // Accumulates input gradients given the output gradient.
  std::function<void(const double *out_grad, GradTable &table)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;      // trainable leaf: gradients accumulate here
  std::vector<double> grad;        // sized lazily on first accumulation
  std::shared_ptr<OpNode> producer;  // null for leaves
};

}  // namespace detail

/// Dense row-major double tensor with reverse-mode autodiff.
///
/// Values are immutable once the tensor has entered a graph; the grad slot
/// and (for leaf parameters, between graphs) the value buffer are the only
/// mutable state. Copying a Tensor copies a handle, not the data.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape &shape() const;
  int dim(int axis) const;
  std::size_t size() const;

  std::span<const double> values() const;
  /// Mutable access to the value buffer. Only meaningful for leaf parameters
  /// between graph constructions (optimizer updates, finite differences).
  std::span<double> values_mut();
  double value() const;  // scalar tensors only
  double at(int row, int col) const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  bool is_leaf() const;

  /// Same values, new shape (same element count); result is a leaf.
  /// Used to view [n, T, d] features as [(n*T), d] before matrix ops.
  Tensor reshaped(Shape shape) const;

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor make_op_output(const char *name, Shape shape,
                               std::vector<double> values,
                               std::vector<Tensor> inputs,
                               std::function<void(const double *, GradTable &)>
                                   backward);
};

/// Gradient routing used during one backward traversal. Trainable leaves
/// accumulate into their persistent grad slot; intermediate tensors use
/// per-traversal scratch buffers, so running backward twice on the same
/// graph doubles leaf gradients exactly.
class GradTable {
 public:
  /// Buffer to accumulate into for `t`, or nullptr if `t` does not
  /// participate in differentiation.
  double *sink(const Tensor &t);
  /// Current accumulated gradient of a node output.
  const double *grad_of(const detail::TensorImpl *out) const;
  void seed(const detail::TensorImpl *root, std::vector<double> seed_values);

 private:
  std::unordered_map<const detail::TensorImpl *, std::vector<double>> scratch_;
};

/// Whether gradients must flow to or through this tensor.
bool participates_in_grad(const Tensor &t);

/// Topologically ordered record of the operations reachable from a root.
/// Rebuilt per backward call (define-by-run).
class ComputeGraph {
 public:
  static ComputeGraph from(const Tensor &root);

  /// Reverse traversal; `seed_values` is the gradient of the root.
  void run_backward(std::vector<double> seed_values);

  std::size_t node_count() const { return nodes_.size(); }
  const std::vector<std::shared_ptr<detail::OpNode>> &nodes() const {
    return nodes_;
  }
  /// True when every node's producing inputs precede it (tested invariant).
  bool topologically_ordered() const;

 private:
  Tensor root_;
  std::vector<std::shared_ptr<detail::OpNode>> nodes_;
};

/// Backpropagate from a scalar loss with seed gradient 1.0. Gradients
/// accumulate (+=) into every reachable requires_grad tensor.
void backward(const Tensor &loss);

// --- Differentiable operations -------------------------------------------

/// out[i,j] = sum_k W[j,k] * x[i,k] + b[j].  x: [n, d_in], W: [d_out, d_in],
/// b: [d_out] or undefined.
Tensor linear(const Tensor &x, const Tensor &weight,
              const Tensor &bias = Tensor());

/// Elementwise max(0, x). Gradient at exactly 0 is 0.
Tensor relu(const Tensor &x);

/// Rows divided by max(||row||_2, eps). x: [n, d], eps > 0.
Tensor l2_normalize(const Tensor &x, double eps);

/// Mean over rows of -log softmax(logits)[target], max-stabilized.
Tensor softmax_cross_entropy(const Tensor &logits,
                             std::span<const int> targets);

Tensor add(const Tensor &a, const Tensor &b);  // same shape
Tensor mul(const Tensor &a, const Tensor &b);  // same shape, elementwise
Tensor scale(const Tensor &a, double factor);
Tensor sum(const Tensor &x);  // scalar

/// x: [(n*group), d] -> [n, d]; row u is the mean of rows
/// [u*group, (u+1)*group). Mean pooling over the frame axis.
Tensor mean_over_groups(const Tensor &x, int group);

/// Identity forward; backward multiplies the upstream gradient by `factor`.
/// The gradient reversal layer is this with factor = -eta.
Tensor grad_scaled_identity(const Tensor &x, double factor);

/// x: [n, (classes*group)] -> [n, classes]; entry (i, c) is
/// max_k x[i, c*group + k]. Gradient routes to the argmax element only
/// (first maximum on ties).
Tensor group_max(const Tensor &x, int group);

/// Additive angular margin on the target-class cosine.
/// cosines: [n, classes] of cosine similarities; output logits [n, classes]:
///   non-target: s * cos
///   target:     s * cos(theta + m)  computed as cos*cos(m) - sin*sin(m)
/// with cos clamped to [-1+1e-7, 1-1e-7] and sin = sqrt(1-cos^2).
/// Past the angular boundary (theta + m > pi) the target logit falls back to
/// the monotone surrogate s * (cos - m*sin).
Tensor arcmargin_logits(const Tensor &cosines, std::span<const int> labels,
                        double margin, double scale_s);

// --- Finite-difference oracle ---------------------------------------------

struct GradCheckEntry {
  std::string name;
  bool has_gradient = true;   // false for frozen (requires_grad == false)
  bool nan_flagged = false;   // f produced a NaN during probing
  double max_rel_err = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  double step = 0.0;
  double tol = 0.0;
  std::vector<GradCheckEntry> entries;
  bool all_passed() const;
  std::string summary() const;
};

/// Central-difference check of autodiff gradients.
///
/// `f` must rebuild its graph and return the (deterministic) scalar loss on
/// every call. Each parameter element is perturbed by +-step and
/// (f(p+h) - f(p-h)) / 2h is compared against the autodiff gradient. The
/// relative error is |ad - fd| / max(|ad|, |fd|, 1), i.e. relative for large
/// gradients and absolute below magnitude one.
GradCheckReport finite_diff_check(
    const std::function<Tensor()> &f,
    const std::vector<std::pair<std::string, Tensor>> &params, double step,
    double tol);

}  // namespace dlra

#endif  // DLRA_TENSOR_HPP_
