#pragma once

// Dense fp64 tensors with a tape-based reverse-mode autodiff.
//
// Layout is row-major, NCHW for images. A Tensor owns its buffer: copying a
// Tensor makes an independent snapshot (values, grad and requires_grad are
// copied; the link to the graph that produced it is not). Moves are cheap.
//
// Ops take the Graph they record into as the first argument. An op records a
// node only when the graph is recording and at least one input requires a
// gradient; otherwise its output is a plain constant.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mtuda/labels.hpp"

namespace mtuda {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Graph;

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty when absent
  bool requires_grad = false;
  std::uint64_t graph_id = 0;  // nonzero on op outputs recorded in a graph
};
using ImplPtr = std::shared_ptr<TensorImpl>;
struct TensorAccess;
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v);

  Tensor(const Tensor& other);
  Tensor& operator=(const Tensor& other);
  Tensor(Tensor&&) noexcept = default;
  Tensor& operator=(Tensor&&) noexcept = default;
  ~Tensor() = default;

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const;

  std::span<double> values();
  std::span<const double> values() const;
  double item() const;

  /// Element of a rank-4 tensor.
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  /// Gradient values; empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  /// Gradient buffer, allocated as zeros when absent.
  std::span<double> mutable_grad();
  /// Drops the gradient (has_grad() becomes false).
  void zero_grad();

  /// Constant copy: same values, requires_grad = false, no gradient.
  Tensor detach() const;

 private:
  friend class Graph;
  friend struct detail::TensorAccess;
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  const detail::TensorImpl& impl() const;
  detail::TensorImpl& impl();

  std::shared_ptr<detail::TensorImpl> impl_;
};

enum class OpKind {
  Conv2d,
  LeakyRelu,
  BilinearUpsample,
  SoftmaxChannel,
  SelfInformation,
  NllProbs,
  BceLogits,
  KlDivergence,
  ConcatBatch,
  Add,
  Scale,
  Mul,
  Sum,
  Mean,
};

const char* op_name(OpKind kind);

/// Ordered record of executed ops. Nodes are appended as ops run, so every
/// node's inputs precede it and one reverse sweep visits each node once.
class Graph {
 public:
  using BackwardFn = std::function<void(std::span<const double> grad_out)>;

  Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  /// A graph that never records; use for evaluation.
  static Graph no_grad();

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }
  OpKind kind(std::size_t i) const { return nodes_.at(i).kind; }

  /// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
  /// `loss`. Leaf gradients accumulate across calls; the caller zeroes them.
  void backward(const Tensor& loss);

  // Op-author interface (used by the op implementations).
  bool wants_grad(const std::vector<const Tensor*>& inputs) const;
  Tensor record(OpKind kind, const std::vector<const Tensor*>& inputs, Shape shape,
                std::vector<double> values, BackwardFn fn);

 private:
  struct Node {
    OpKind kind;
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::uint64_t id_ = 0;
  bool recording_ = true;
};

/// Free-function form of Graph::backward.
void backward(const Tensor& loss, Graph& graph);

// ---------------------------------------------------------------------------
// Differentiable ops
// ---------------------------------------------------------------------------

/// 2-D convolution, NCHW input, [Cout, Cin, kh, kw] weight, zero padding.
/// Output size floor((H + 2*padding - kh) / stride) + 1. `bias` may be undefined.
Tensor conv2d(Graph& g, const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding);

/// max(x, slope*x) for slope in [0, 1); the gradient at x == 0 is `slope`.
Tensor leaky_relu(Graph& g, const Tensor& input, double slope);

/// Bilinear resize with align_corners = false: source coordinate
/// (dst + 0.5) * in/out - 0.5, clamped to the valid range.
Tensor bilinear_upsample(Graph& g, const Tensor& input, std::size_t out_h, std::size_t out_w);

/// Softmax over the channel axis of an NCHW tensor (max-subtracted).
Tensor softmax_channel(Graph& g, const Tensor& input);

/// Entry-wise -p*log(p), with 0 for p <= 0.
Tensor self_information(Graph& g, const Tensor& probs);

/// Mean over non-IGNORE pixels of -log(max(p_true, floor)). Returns 0 when
/// every pixel is ignored.
Tensor nll_probs(Graph& g, const Tensor& probs, const LabelMap& labels, double floor);

/// Mean over all entries of the binary cross-entropy of sigmoid(logit)
/// against a constant target (0 or 1), computed through softplus.
Tensor bce_with_logits(Graph& g, const Tensor& logits, int target);

/// sum_{c,h,w} t*log(t/s), averaged over the batch. Entries with t == 0
/// contribute 0; s is floored at `floor`. `pixel_mask` ([N*H*W], optional)
/// weights each pixel's contribution.
Tensor kl_divergence(Graph& g, const Tensor& teacher, const Tensor& student, double floor,
                     const std::vector<double>* pixel_mask = nullptr);

/// Concatenation along axis 0.
Tensor concat_batch(Graph& g, const std::vector<const Tensor*>& parts);

Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& a, double factor);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor sum(Graph& g, const Tensor& a);
Tensor mean(Graph& g, const Tensor& a);

// ---------------------------------------------------------------------------
// Non-differentiable helpers
// ---------------------------------------------------------------------------

/// Per-pixel argmax over channels; ties resolve to the lowest channel index.
LabelMap argmax_channel(const Tensor& scores);

/// Sub-batch [begin, end) along axis 0 as a constant.
Tensor slice_batch(const Tensor& t, std::size_t begin, std::size_t end);

void check_finite(const Tensor& t, const char* where);

}  // namespace mtuda
