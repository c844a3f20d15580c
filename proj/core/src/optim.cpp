#include "dstu/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dstu {

void sgd_step(std::span<Parameter> params, SgdState& state, const OptimConfig& optim, double lr) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) throw std::invalid_argument("sgd_step: parameter " + p.name + " has no gradient");
  }
  if (state.velocity.empty()) {
    state.velocity.reserve(params.size());
    for (const auto& p : params) state.velocity.emplace_back(p.tensor.size(), 0.0);
  }
  if (state.velocity.size() != params.size())
    throw std::invalid_argument("sgd_step: optimizer state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].tensor.mutable_data();
    const auto grad = params[i].tensor.grad();
    auto& v = state.velocity[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      v[k] = optim.momentum * v[k] + (grad[k] + optim.weight_decay * values[k]);
      values[k] -= lr * v[k];
    }
  }
}

double cosine_lr(std::size_t epoch, std::size_t total, double lr0) {
  if (total == 0 || epoch >= total)
    throw std::invalid_argument("cosine_lr: epoch must lie in [0, total)");
  const double t = static_cast<double>(epoch) / static_cast<double>(total);
  return lr0 * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

void materialize_grads(std::span<Parameter> params) {
  for (auto& p : params) {
    if (!p.tensor.has_grad()) p.tensor.impl()->grad_buffer();
  }
}

}  // namespace dstu
