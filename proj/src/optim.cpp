#include "mtuda/optim.hpp"

#include <cmath>

#include "mtuda/errors.hpp"

namespace mtuda {

namespace {

void ensure_slots(std::vector<std::vector<double>>& buf, const std::vector<Tensor*>& params) {
  if (buf.empty()) buf.resize(params.size());
  if (buf.size() != params.size()) throw DimensionError("optimizer state does not match the parameter list");
}

void ensure_buffer(std::vector<double>& b, const Tensor& p) {
  if (b.empty()) b.assign(p.numel(), 0.0);
  if (b.size() != p.numel()) throw DimensionError("optimizer buffer does not match parameter " + shape_str(p.shape()));
}

}  // namespace

void sgd_step(const std::vector<Tensor*>& params, SgdState& state, double lr, double momentum, double weight_decay) {
  ensure_slots(state.velocity, params);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    if (!p.has_grad()) continue;
    auto& v = state.velocity[k];
    ensure_buffer(v, p);
    auto g = p.grad();
    auto w = p.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum * v[i] + (g[i] + weight_decay * w[i]);
      w[i] -= lr * v[i];
    }
  }
}

void adam_step(const std::vector<Tensor*>& params, AdamState& state, double lr) {
  ensure_slots(state.m, params);
  ensure_slots(state.v, params);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    if (!p.has_grad()) continue;
    auto& m = state.m[k];
    auto& v = state.v[k];
    ensure_buffer(m, p);
    ensure_buffer(v, p);
    auto g = p.grad();
    auto w = p.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
  }
}

void zero_grads(const std::vector<Tensor*>& params) {
  for (Tensor* p : params) p->zero_grad();
}

}  // namespace mtuda
