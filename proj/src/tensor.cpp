#include "mtuda/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mtuda/errors.hpp"

namespace mtuda {

namespace detail {
struct TensorAccess {
  static const ImplPtr& impl(const Tensor& t) { return t.impl_; }
};
}  // namespace detail

namespace {

using detail::ImplPtr;
using detail::TensorAccess;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

std::atomic<std::uint64_t> g_next_graph_id{1};

// Gradient buffer of an input, or empty when it does not take gradients.
std::span<double> sink(const ImplPtr& p) {
  if (!p || !p->requires_grad) return {};
  if (p->grad.empty()) p->grad.assign(p->values.size(), 0.0);
  return p->grad;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (!t.defined() || t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + " tensor, got " +
                         (t.defined() ? shape_str(t.shape()) : "undefined"));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  impl_->values.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("Tensor: shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor::Tensor(const Tensor& other) {
  if (other.impl_) {
    impl_ = std::make_shared<detail::TensorImpl>(*other.impl_);
    impl_->graph_id = 0;
  }
}

Tensor& Tensor::operator=(const Tensor& other) {
  if (this != &other) {
    Tensor tmp(other);
    impl_ = std::move(tmp.impl_);
  }
  return *this;
}

const detail::TensorImpl& Tensor::impl() const {
  if (!impl_) throw ContractError("use of undefined Tensor");
  return *impl_;
}

detail::TensorImpl& Tensor::impl() {
  if (!impl_) throw ContractError("use of undefined Tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t i) const {
  const auto& s = shape();
  if (i >= s.size()) throw DimensionError("dim index out of range for shape " + shape_str(s));
  return s[i];
}

std::size_t Tensor::numel() const { return impl().values.size(); }
std::span<double> Tensor::values() { return impl().values; }
std::span<const double> Tensor::values() const { return impl().values; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl().values[0];
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  const auto& s = shape();
  return impl().values[((n * s[1] + c) * s[2] + h) * s[3] + w];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }
void Tensor::set_requires_grad(bool on) { impl().requires_grad = on; }
bool Tensor::has_grad() const { return !impl().grad.empty(); }
std::span<const double> Tensor::grad() const { return impl().grad; }

std::span<double> Tensor::mutable_grad() {
  auto& i = impl();
  if (i.grad.empty()) i.grad.assign(i.values.size(), 0.0);
  return i.grad;
}

void Tensor::zero_grad() {
  auto& i = impl();
  i.grad.clear();
  i.grad.shrink_to_fit();
}

Tensor Tensor::detach() const {
  Tensor out(shape(), impl().values);
  return out;
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Conv2d: return "conv2d";
    case OpKind::LeakyRelu: return "leaky_relu";
    case OpKind::BilinearUpsample: return "bilinear_upsample";
    case OpKind::SoftmaxChannel: return "softmax_channel";
    case OpKind::SelfInformation: return "self_information";
    case OpKind::NllProbs: return "nll_probs";
    case OpKind::BceLogits: return "bce_with_logits";
    case OpKind::KlDivergence: return "kl_divergence";
    case OpKind::ConcatBatch: return "concat_batch";
    case OpKind::Add: return "add";
    case OpKind::Scale: return "scale";
    case OpKind::Mul: return "mul";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
  }
  return "?";
}

Graph::Graph() : id_(g_next_graph_id.fetch_add(1)) {}

Graph Graph::no_grad() {
  Graph g;
  g.recording_ = false;
  return g;
}

bool Graph::wants_grad(const std::vector<const Tensor*>& inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t && t->defined() && t->requires_grad(); });
}

Tensor Graph::record(OpKind kind, const std::vector<const Tensor*>& inputs, Shape shape,
                     std::vector<double> values, BackwardFn fn) {
  Tensor out(std::move(shape), std::move(values));
  if (!wants_grad(inputs)) return out;
  auto& impl = *TensorAccess::impl(out);
  impl.requires_grad = true;
  impl.graph_id = id_;
  Node node{kind, {}, TensorAccess::impl(out), std::move(fn)};
  node.inputs.reserve(inputs.size());
  for (const Tensor* t : inputs) {
    if (t && t->defined()) node.inputs.push_back(TensorAccess::impl(*t));
  }
  nodes_.push_back(std::move(node));
  return out;
}

void Graph::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  const auto& limpl = TensorAccess::impl(loss);
  if (limpl->graph_id != 0 && limpl->graph_id != id_) {
    throw ContractError("backward: loss was recorded in a different graph");
  }
  if (!limpl->requires_grad) return;

  for (auto& node : nodes_) node.output->grad.clear();
  sink(limpl)[0] += 1.0;

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward(it->output->grad);
  }
}

void backward(const Tensor& loss, Graph& graph) { graph.backward(loss); }

// ---------------------------------------------------------------------------
// conv2d: im2col + GEMM per image
// ---------------------------------------------------------------------------

namespace {

struct ConvGeom {
  std::size_t n, cin, h, w, cout, kh, kw, ho, wo;
  int stride, pad;
  std::size_t k() const { return cin * kh * kw; }
  std::size_t p() const { return ho * wo; }
};

void im2col(const double* x, const ConvGeom& g, double* cols) {
  const std::size_t P = g.p();
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    const double* xc = x + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = cols + ((ci * g.kh + ky) * g.kw + kx) * P;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = xc + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeom& g, double* gx) {
  const std::size_t P = g.p();
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    double* gxc = gx + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = cols + ((ci * g.kh + ky) * g.kw + kx) * P;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          const double* src = row + oy * g.wo;
          double* dst = gxc + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(Graph& graph, const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  if (padding < 0) throw DimensionError("conv2d: padding must be >= 0");
  ConvGeom g{};
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = stride;
  g.pad = padding;
  if (weight.dim(1) != g.cin) {
    throw DimensionError("conv2d: input has " + std::to_string(g.cin) + " channels, weight expects " +
                         std::to_string(weight.dim(1)));
  }
  if (g.kh % 2 == 0 || g.kw % 2 == 0) throw DimensionError("conv2d: kernel sizes must be odd");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout)) {
    throw DimensionError("conv2d: bias shape " + shape_str(bias.shape()) + " does not match Cout");
  }
  const long hp = static_cast<long>(g.h) + 2 * padding - static_cast<long>(g.kh);
  const long wp = static_cast<long>(g.w) + 2 * padding - static_cast<long>(g.kw);
  if (hp < 0 || wp < 0) throw DimensionError("conv2d: kernel larger than padded input");
  g.ho = static_cast<std::size_t>(hp / stride + 1);
  g.wo = static_cast<std::size_t>(wp / stride + 1);

  const std::size_t K = g.k(), P = g.p();
  const bool tracked = graph.wants_grad({&input, &weight, &bias});
  auto cols = std::make_shared<std::vector<double>>(tracked ? g.n * K * P : K * P);
  std::vector<double> out(g.n * g.cout * P);
  ConstMapMat wmat(weight.values().data(), g.cout, K);
  const auto x = input.values();
  for (std::size_t n = 0; n < g.n; ++n) {
    double* cn = cols->data() + (tracked ? n * K * P : 0);
    im2col(x.data() + n * g.cin * g.h * g.w, g, cn);
    MapMat omat(out.data() + n * g.cout * P, g.cout, P);
    omat.noalias() = wmat * ConstMapMat(cn, K, P);
    if (bias.defined()) {
      const auto b = bias.values();
      for (std::size_t co = 0; co < g.cout; ++co) omat.row(co).array() += b[co];
    }
  }

  ImplPtr xi = detail::TensorAccess::impl(input);
  ImplPtr wi = detail::TensorAccess::impl(weight);
  ImplPtr bi = bias.defined() ? detail::TensorAccess::impl(bias) : nullptr;
  Tensor result = graph.record(
      OpKind::Conv2d, {&input, &weight, &bias}, {g.n, g.cout, g.ho, g.wo}, std::move(out),
      [g, cols, xi, wi, bi](std::span<const double> gout) {
        const std::size_t K = g.k(), P = g.p();
        auto gw = sink(wi);
        auto gb = sink(bi);
        auto gx = sink(xi);
        ConstMapMat wmat(wi->values.data(), g.cout, K);
        std::vector<double> dcols(gx.empty() ? 0 : K * P);
        for (std::size_t n = 0; n < g.n; ++n) {
          ConstMapMat gomat(gout.data() + n * g.cout * P, g.cout, P);
          ConstMapMat cmat(cols->data() + n * K * P, K, P);
          if (!gw.empty()) {
            MapMat(gw.data(), g.cout, K).noalias() += gomat * cmat.transpose();
          }
          if (!gb.empty()) {
            // Sequential sum: Eigen's vectorized reduction peels by address alignment.
            for (std::size_t co = 0; co < g.cout; ++co) {
              const double* row = gout.data() + (n * g.cout + co) * P;
              double acc = 0.0;
              for (std::size_t i = 0; i < P; ++i) acc += row[i];
              gb[co] += acc;
            }
          }
          if (!gx.empty()) {
            MapMat(dcols.data(), K, P).noalias() = wmat.transpose() * gomat;
            col2im_add(dcols.data(), g, gx.data() + n * g.cin * g.h * g.w);
          }
        }
      });
  check_finite(result, "conv2d");
  return result;
}

// ---------------------------------------------------------------------------
// Element-wise and spatial ops
// ---------------------------------------------------------------------------

Tensor leaky_relu(Graph& graph, const Tensor& input, double slope) {
  if (!(slope >= 0.0 && slope < 1.0)) throw ContractError("leaky_relu: slope must be in [0, 1)");
  const auto x = input.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : slope * x[i];
  ImplPtr xi = detail::TensorAccess::impl(input);
  return graph.record(OpKind::LeakyRelu, {&input}, input.shape(), std::move(out),
                      [xi, slope](std::span<const double> gout) {
                        auto gx = sink(xi);
                        const auto& x = xi->values;
                        for (std::size_t i = 0; i < gx.size(); ++i) {
                          gx[i] += x[i] > 0.0 ? gout[i] : slope * gout[i];
                        }
                      });
}

namespace {

struct Interp {
  std::size_t lo, hi;
  double frac;
};

std::vector<Interp> interp_table(std::size_t in, std::size_t out) {
  std::vector<Interp> t(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::size_t>(src);
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    t[d] = {lo, hi, src - static_cast<double>(lo)};
  }
  return t;
}

}  // namespace

Tensor bilinear_upsample(Graph& graph, const Tensor& input, std::size_t out_h, std::size_t out_w) {
  require_rank(input, 4, "bilinear_upsample");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (out_h < h || out_w < w) throw DimensionError("bilinear_upsample: output smaller than input");
  const auto ty = interp_table(h, out_h);
  const auto tx = interp_table(w, out_w);
  const auto x = input.values();
  std::vector<double> out(n * c * out_h * out_w);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = x.data() + plane * h * w;
    double* dst = out.data() + plane * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& iy = ty[oy];
      const double* r0 = src + iy.lo * w;
      const double* r1 = src + iy.hi * w;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& ix = tx[ox];
        const double top = r0[ix.lo] + (r0[ix.hi] - r0[ix.lo]) * ix.frac;
        const double bot = r1[ix.lo] + (r1[ix.hi] - r1[ix.lo]) * ix.frac;
        dst[oy * out_w + ox] = top + (bot - top) * iy.frac;
      }
    }
  }
  ImplPtr xi = detail::TensorAccess::impl(input);
  return graph.record(OpKind::BilinearUpsample, {&input}, {n, c, out_h, out_w}, std::move(out),
                      [xi, n, c, h, w, out_h, out_w, ty, tx](std::span<const double> gout) {
                        auto gx = sink(xi);
                        for (std::size_t plane = 0; plane < n * c; ++plane) {
                          double* dst = gx.data() + plane * h * w;
                          const double* src = gout.data() + plane * out_h * out_w;
                          for (std::size_t oy = 0; oy < out_h; ++oy) {
                            const auto& iy = ty[oy];
                            for (std::size_t ox = 0; ox < out_w; ++ox) {
                              const auto& ix = tx[ox];
                              const double gv = src[oy * out_w + ox];
                              const double top = gv * (1.0 - iy.frac);
                              const double bot = gv * iy.frac;
                              dst[iy.lo * w + ix.lo] += top * (1.0 - ix.frac);
                              dst[iy.lo * w + ix.hi] += top * ix.frac;
                              dst[iy.hi * w + ix.lo] += bot * (1.0 - ix.frac);
                              dst[iy.hi * w + ix.hi] += bot * ix.frac;
                            }
                          }
                        }
                      });
}

Tensor softmax_channel(Graph& graph, const Tensor& input) {
  require_rank(input, 4, "softmax_channel");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  const auto x = input.values();
  auto out = std::make_shared<std::vector<double>>(x.size());
  std::vector<double> mx(hw), total(hw);
  for (std::size_t b = 0; b < n; ++b) {
    const double* xb = x.data() + b * c * hw;
    double* yb = out->data() + b * c * hw;
    std::copy(xb, xb + hw, mx.begin());
    for (std::size_t k = 1; k < c; ++k) {
      for (std::size_t p = 0; p < hw; ++p) mx[p] = std::max(mx[p], xb[k * hw + p]);
    }
    std::fill(total.begin(), total.end(), 0.0);
    for (std::size_t k = 0; k < c; ++k) {
      for (std::size_t p = 0; p < hw; ++p) {
        const double e = std::exp(xb[k * hw + p] - mx[p]);
        yb[k * hw + p] = e;
        total[p] += e;
      }
    }
    for (std::size_t k = 0; k < c; ++k) {
      for (std::size_t p = 0; p < hw; ++p) yb[k * hw + p] /= total[p];
    }
  }
  ImplPtr xi = detail::TensorAccess::impl(input);
  std::vector<double> values = *out;
  return graph.record(OpKind::SoftmaxChannel, {&input}, input.shape(), std::move(values),
                      [xi, out, n, c, hw](std::span<const double> gout) {
                        auto gx = sink(xi);
                        std::vector<double> dot(hw);
                        for (std::size_t b = 0; b < n; ++b) {
                          const double* y = out->data() + b * c * hw;
                          const double* go = gout.data() + b * c * hw;
                          double* gi = gx.data() + b * c * hw;
                          std::fill(dot.begin(), dot.end(), 0.0);
                          for (std::size_t k = 0; k < c; ++k) {
                            for (std::size_t p = 0; p < hw; ++p) dot[p] += go[k * hw + p] * y[k * hw + p];
                          }
                          for (std::size_t k = 0; k < c; ++k) {
                            for (std::size_t p = 0; p < hw; ++p) {
                              gi[k * hw + p] += y[k * hw + p] * (go[k * hw + p] - dot[p]);
                            }
                          }
                        }
                      });
}

Tensor self_information(Graph& graph, const Tensor& probs) {
  const auto p = probs.values();
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] > 0.0 ? -p[i] * std::log(p[i]) : 0.0;
  ImplPtr pi = detail::TensorAccess::impl(probs);
  return graph.record(OpKind::SelfInformation, {&probs}, probs.shape(), std::move(out),
                      [pi](std::span<const double> gout) {
                        auto gp = sink(pi);
                        const auto& p = pi->values;
                        for (std::size_t i = 0; i < gp.size(); ++i) {
                          if (p[i] > 0.0) gp[i] -= gout[i] * (std::log(p[i]) + 1.0);
                        }
                      });
}

Tensor nll_probs(Graph& graph, const Tensor& probs, const LabelMap& labels, double floor) {
  require_rank(probs, 4, "nll_probs");
  const std::size_t n = probs.dim(0), c = probs.dim(1), hw = probs.dim(2) * probs.dim(3);
  if (labels.n != n || labels.h != probs.dim(2) || labels.w != probs.dim(3)) {
    throw DimensionError("nll_probs: labels do not match probability map " + shape_str(probs.shape()));
  }
  const auto p = probs.values();
  std::size_t counted = 0;
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t q = 0; q < hw; ++q) {
      const std::int32_t y = labels.values[b * hw + q];
      if (y == kIgnoreLabel) continue;
      if (y < 0 || static_cast<std::size_t>(y) >= c) {
        throw ContractError("nll_probs: label " + std::to_string(y) + " outside [0, C)");
      }
      total -= std::log(std::max(p[(b * c + y) * hw + q], floor));
      ++counted;
    }
  }
  const double value = counted ? total / static_cast<double>(counted) : 0.0;
  ImplPtr pi = detail::TensorAccess::impl(probs);
  auto lab = std::make_shared<std::vector<std::int32_t>>(labels.values);
  return graph.record(OpKind::NllProbs, {&probs}, {}, {value},
                      [pi, lab, n, c, hw, counted, floor](std::span<const double> gout) {
                        if (counted == 0) return;
                        auto gp = sink(pi);
                        const auto& p = pi->values;
                        const double s = gout[0] / static_cast<double>(counted);
                        for (std::size_t b = 0; b < n; ++b) {
                          for (std::size_t q = 0; q < hw; ++q) {
                            const std::int32_t y = (*lab)[b * hw + q];
                            if (y == kIgnoreLabel) continue;
                            const std::size_t idx = (b * c + y) * hw + q;
                            if (p[idx] >= floor) gp[idx] -= s / p[idx];
                          }
                        }
                      });
}

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Tensor bce_with_logits(Graph& graph, const Tensor& logits, int target) {
  if (target != 0 && target != 1) throw ContractError("bce_with_logits: target must be 0 or 1");
  const auto x = logits.values();
  if (x.empty()) throw DimensionError("bce_with_logits: empty logit map");
  const double sign = target == 1 ? -1.0 : 1.0;
  double total = 0.0;
  for (double v : x) total += softplus(sign * v);
  const double m = static_cast<double>(x.size());
  ImplPtr xi = detail::TensorAccess::impl(logits);
  return graph.record(OpKind::BceLogits, {&logits}, {}, {total / m},
                      [xi, sign, m](std::span<const double> gout) {
                        auto gx = sink(xi);
                        const auto& x = xi->values;
                        const double s = gout[0] / m;
                        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += s * sign * sigmoid(sign * x[i]);
                      });
}

Tensor kl_divergence(Graph& graph, const Tensor& teacher, const Tensor& student, double floor,
                     const std::vector<double>* pixel_mask) {
  require_rank(teacher, 4, "kl_divergence");
  require_same_shape(teacher, student, "kl_divergence");
  const std::size_t n = teacher.dim(0), c = teacher.dim(1), hw = teacher.dim(2) * teacher.dim(3);
  std::shared_ptr<std::vector<double>> mask;
  if (pixel_mask) {
    if (pixel_mask->size() != n * hw) throw DimensionError("kl_divergence: mask size mismatch");
    mask = std::make_shared<std::vector<double>>(*pixel_mask);
  }
  const auto t = teacher.values();
  const auto s = student.values();
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t k = 0; k < c; ++k) {
      for (std::size_t q = 0; q < hw; ++q) {
        const std::size_t i = (b * c + k) * hw + q;
        if (t[i] <= 0.0) continue;
        const double m = mask ? (*mask)[b * hw + q] : 1.0;
        if (m == 0.0) continue;
        total += m * t[i] * (std::log(t[i]) - std::log(std::max(s[i], floor)));
      }
    }
  }
  const double nb = static_cast<double>(n);
  ImplPtr ti = detail::TensorAccess::impl(teacher);
  ImplPtr si = detail::TensorAccess::impl(student);
  Tensor result = graph.record(
      OpKind::KlDivergence, {&teacher, &student}, {}, {total / nb},
      [ti, si, mask, n, c, hw, nb, floor](std::span<const double> gout) {
        auto gt = sink(ti);
        auto gs = sink(si);
        const auto& t = ti->values;
        const auto& s = si->values;
        const double g0 = gout[0] / nb;
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t k = 0; k < c; ++k) {
            for (std::size_t q = 0; q < hw; ++q) {
              const std::size_t i = (b * c + k) * hw + q;
              if (t[i] <= 0.0) continue;
              const double m = mask ? (*mask)[b * hw + q] : 1.0;
              if (m == 0.0) continue;
              const double sf = std::max(s[i], floor);
              if (!gs.empty() && s[i] >= floor) gs[i] -= g0 * m * t[i] / s[i];
              if (!gt.empty()) gt[i] += g0 * m * (std::log(t[i]) - std::log(sf) + 1.0);
            }
          }
        }
      });
  check_finite(result, "kl_divergence");
  return result;
}

Tensor concat_batch(Graph& graph, const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw ContractError("concat_batch: no inputs");
  Shape tail(parts[0]->shape().begin() + 1, parts[0]->shape().end());
  std::size_t total_n = 0;
  std::vector<double> out;
  for (const Tensor* p : parts) {
    if (p->rank() == 0 || Shape(p->shape().begin() + 1, p->shape().end()) != tail) {
      throw DimensionError("concat_batch: incompatible shape " + shape_str(p->shape()));
    }
    total_n += p->dim(0);
    out.insert(out.end(), p->values().begin(), p->values().end());
  }
  Shape shape{total_n};
  shape.insert(shape.end(), tail.begin(), tail.end());
  std::vector<ImplPtr> impls;
  for (const Tensor* p : parts) impls.push_back(detail::TensorAccess::impl(*p));
  return graph.record(OpKind::ConcatBatch, parts, std::move(shape), std::move(out),
                      [impls](std::span<const double> gout) {
                        std::size_t offset = 0;
                        for (const auto& pi : impls) {
                          const std::size_t len = pi->values.size();
                          auto g = sink(pi);
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[offset + i];
                          offset += len;
                        }
                      });
}

Tensor add(Graph& graph, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  ImplPtr ai = detail::TensorAccess::impl(a);
  ImplPtr bi = detail::TensorAccess::impl(b);
  return graph.record(OpKind::Add, {&a, &b}, a.shape(), std::move(out), [ai, bi](std::span<const double> gout) {
    for (const auto& p : {ai, bi}) {
      auto g = sink(p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i];
    }
  });
}

Tensor scale(Graph& graph, const Tensor& a, double factor) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = factor * av[i];
  ImplPtr ai = detail::TensorAccess::impl(a);
  return graph.record(OpKind::Scale, {&a}, a.shape(), std::move(out), [ai, factor](std::span<const double> gout) {
    auto g = sink(ai);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * gout[i];
  });
}

Tensor mul(Graph& graph, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  ImplPtr ai = detail::TensorAccess::impl(a);
  ImplPtr bi = detail::TensorAccess::impl(b);
  return graph.record(OpKind::Mul, {&a, &b}, a.shape(), std::move(out), [ai, bi](std::span<const double> gout) {
    auto ga = sink(ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i] * bi->values[i];
    auto gb = sink(bi);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gout[i] * ai->values[i];
  });
}

Tensor sum(Graph& graph, const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  ImplPtr ai = detail::TensorAccess::impl(a);
  return graph.record(OpKind::Sum, {&a}, {}, {total}, [ai](std::span<const double> gout) {
    auto g = sink(ai);
    for (double& v : g) v += gout[0];
  });
}

Tensor mean(Graph& graph, const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  const double m = static_cast<double>(a.numel());
  ImplPtr ai = detail::TensorAccess::impl(a);
  return graph.record(OpKind::Mean, {&a}, {}, {total / m}, [ai, m](std::span<const double> gout) {
    auto g = sink(ai);
    for (double& v : g) v += gout[0] / m;
  });
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

LabelMap argmax_channel(const Tensor& scores) {
  require_rank(scores, 4, "argmax_channel");
  const std::size_t n = scores.dim(0), c = scores.dim(1), h = scores.dim(2), w = scores.dim(3);
  const std::size_t hw = h * w;
  LabelMap out(n, h, w, 0);
  const auto s = scores.values();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t q = 0; q < hw; ++q) {
      std::int32_t best = 0;
      double best_v = s[b * c * hw + q];
      for (std::size_t k = 1; k < c; ++k) {
        const double v = s[(b * c + k) * hw + q];
        if (v > best_v) {
          best_v = v;
          best = static_cast<std::int32_t>(k);
        }
      }
      out.values[b * hw + q] = best;
    }
  }
  return out;
}

Tensor slice_batch(const Tensor& t, std::size_t begin, std::size_t end) {
  if (t.rank() == 0 || begin > end || end > t.dim(0)) throw DimensionError("slice_batch: bad range");
  const std::size_t per = t.numel() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = end - begin;
  const auto v = t.values();
  return Tensor(std::move(shape), std::vector<double>(v.begin() + begin * per, v.begin() + end * per));
}

void check_finite(const Tensor& t, const char* where) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) throw NumericError(std::string(where) + ": non-finite value in output");
  }
}

}  // namespace mtuda
