#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dstu/params.hpp"

namespace dstu {

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-4;
  /// Entries probed per parameter; 0 probes every entry. When sampling, the
  /// entry with the largest analytic gradient is always included.
  std::size_t max_entries_per_param = 0;
  /// Relative error is |a - n| / max(|a|, |n|, abs_floor). The floor keeps
  /// gradients that vanish identically (key biases under softmax) from
  /// scoring central-difference rounding noise as a relative error.
  double abs_floor = 1e-6;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string name;
  std::size_t probed = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  /// Probes whose +h and -h evaluations took different relu pieces. A
  /// central difference across a kink does not estimate the derivative;
  /// these probes still count toward max_rel_error.
  std::size_t kinked = 0;
  double max_rel_error_smooth = 0.0;  // over the remaining probes
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tol = 0.0;
  double max_rel_error = 0.0;
  std::size_t kinked = 0;
  double max_rel_error_smooth = 0.0;
  bool passed = false;
};

/// Compares reverse-mode gradients of the scalar returned by `forward` with
/// central differences. Throws std::invalid_argument when h is outside
/// [1e-7, 1e-3] or when two evaluations of `forward` disagree.
GradCheckReport grad_check(const std::function<Tensor()>& forward,
                           std::span<const Parameter> params, const GradCheckOptions& opts);

}  // namespace dstu
