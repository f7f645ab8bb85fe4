#include "natseg/adam.h"

#include <cmath>

namespace natseg {

AdamState AdamState::make(const ParamList& params, double lr) {
  AdamState s;
  s.lr = lr;
  for (const auto& p : params) {
    s.m.emplace_back(static_cast<std::size_t>(p.tensor.numel()), Real(0));
    s.v.emplace_back(static_cast<std::size_t>(p.tensor.numel()), Real(0));
  }
  return s;
}

void adam_step(const ParamList& params, AdamState& state, double clip_norm) {
  if (params.size() != state.m.size() || params.size() != state.v.size()) {
    throw StateError("adam_step: optimizer holds " + std::to_string(state.m.size()) +
                     " moment buffers for " + std::to_string(params.size()) + " parameters");
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = params[i].tensor;
    const auto n = static_cast<std::size_t>(p.numel());
    if (state.m[i].size() != n || state.v[i].size() != n) {
      throw ShapeError("adam_step: moment buffers of '" + params[i].name + "' do not match its shape " +
                       p.shape().str());
    }
    if (!p.has_grad()) continue;
    for (Real g : p.grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("adam_step: non-finite gradient in parameter '" + params[i].name +
                           "'; step aborted");
      }
      sq += static_cast<double>(g) * g;
    }
  }
  const double norm = std::sqrt(sq);
  const double scale = clip_norm > 0.0 && norm > clip_norm ? clip_norm / norm : 1.0;

  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].tensor;
    auto w = p.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const std::span<const Real> grad = p.grad();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double g = grad.empty() ? 0.0 : scale * grad[k];
      const double mk = state.beta1 * m[k] + (1.0 - state.beta1) * g;
      const double vk = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
      m[k] = static_cast<Real>(mk);
      v[k] = static_cast<Real>(vk);
      const double mhat = mk / bc1;
      const double vhat = vk / bc2;
      w[k] = static_cast<Real>(w[k] - state.lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

}  // namespace natseg
