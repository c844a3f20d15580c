#pragma once

#include <span>
#include <vector>

#include "dstu/config.hpp"
#include "dstu/params.hpp"

namespace dstu {

/// Momentum buffers, one per parameter, created on the first step.
struct SgdState {
  std::vector<std::vector<double>> velocity;
};

/// v <- momentum * v + (g + weight_decay * p);  p <- p - lr * v.
/// Throws std::invalid_argument when a parameter has no gradient.
void sgd_step(std::span<Parameter> params, SgdState& state, const OptimConfig& optim, double lr);

/// lr0 * (1 + cos(pi * epoch / total)) / 2 for 0 <= epoch < total.
double cosine_lr(std::size_t epoch, std::size_t total, double lr0);

/// Gives every parameter without a gradient an explicit zero gradient.
void materialize_grads(std::span<Parameter> params);

}  // namespace dstu
