#include "dstu/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dstu/ops.hpp"

namespace dstu {

namespace {

double eval_no_grad(const std::function<Tensor()>& forward, std::uint64_t* digest = nullptr) {
  NoGradGuard guard;
  reset_relu_pattern_digest();
  const double v = forward().item();
  if (digest) *digest = relu_pattern_digest();
  return v;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& forward,
                           std::span<const Parameter> params, const GradCheckOptions& opts) {
  if (!(opts.h >= 1e-7 && opts.h <= 1e-3))
    throw std::invalid_argument("grad_check: h must lie in [1e-7, 1e-3]");

  const double first = eval_no_grad(forward);
  const double second = eval_no_grad(forward);
  if (first != second) throw std::invalid_argument("grad_check: forward is not deterministic");

  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
  Tensor loss = forward();
  backward(loss);

  GradCheckReport report;
  report.tol = opts.tol;
  report.passed = true;
  Rng rng(opts.seed);

  for (const auto& p : params) {
    Tensor t = p.tensor;
    const std::size_t n = t.size();
    std::vector<double> analytic(n, 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());

    std::vector<std::size_t> probe(n);
    std::iota(probe.begin(), probe.end(), 0);
    if (opts.max_entries_per_param != 0 && n > opts.max_entries_per_param) {
      const auto largest = static_cast<std::size_t>(
          std::max_element(analytic.begin(), analytic.end(),
                           [](double a, double b) { return std::abs(a) < std::abs(b); }) -
          analytic.begin());
      for (std::size_t i = 0; i + 1 < opts.max_entries_per_param; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(probe[i], probe[j]);
      }
      probe.resize(opts.max_entries_per_param - 1);
      if (std::find(probe.begin(), probe.end(), largest) == probe.end()) probe.push_back(largest);
      std::sort(probe.begin(), probe.end());
    }

    GradCheckEntry entry;
    entry.name = p.name;
    entry.probed = probe.size();
    auto values = t.mutable_data();
    for (std::size_t idx : probe) {
      const double saved = values[idx];
      std::uint64_t up = 0, down = 0;
      values[idx] = saved + opts.h;
      const double plus = eval_no_grad(forward, &up);
      values[idx] = saved - opts.h;
      const double minus = eval_no_grad(forward, &down);
      values[idx] = saved;
      const double numeric = (plus - minus) / (2.0 * opts.h);
      const double diff = std::abs(analytic[idx] - numeric);
      const double denom = std::max({std::abs(analytic[idx]), std::abs(numeric), opts.abs_floor});
      entry.max_rel_error = std::max(entry.max_rel_error, diff / denom);
      entry.max_abs_error = std::max(entry.max_abs_error, diff);
      if (up != down) ++entry.kinked;
      else entry.max_rel_error_smooth = std::max(entry.max_rel_error_smooth, diff / denom);
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.max_rel_error_smooth = std::max(report.max_rel_error_smooth, entry.max_rel_error_smooth);
    report.kinked += entry.kinked;
    if (!(entry.max_rel_error <= opts.tol)) report.passed = false;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace dstu
