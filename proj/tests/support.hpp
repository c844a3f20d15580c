// Test helpers and reference implementations. Everything here is written
// directly from the defining formulas with plain loops and does not call the
// library code it is used to check.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <vector>

#include "dstu/attention.hpp"
#include "dstu/tensor.hpp"

namespace dstu::test {

inline std::vector<double> random_values(std::size_t n, std::mt19937_64& gen, double lo = -1.0,
                                         double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(gen);
  return v;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), random_values(n, gen, lo, hi), requires_grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
  return true;
}

/// Central differences of f with respect to every entry of x, evaluated on
/// plain values.
inline std::vector<double> numeric_grad(const std::function<double()>& f, Tensor x,
                                        double h = 1e-6) {
  auto v = x.mutable_data();
  std::vector<double> g(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double saved = v[i];
    v[i] = saved + h;
    const double plus = f();
    v[i] = saved - h;
    const double minus = f();
    v[i] = saved;
    g[i] = (plus - minus) / (2.0 * h);
  }
  return g;
}

inline double max_rel_error(std::span<const double> a, std::span<const double> n,
                            double floor = 1e-8) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - n[i]) / std::max({std::abs(a[i]), std::abs(n[i]), floor}));
  return m;
}

/// Dense multi-head attention over T tokens of dim C, row-major (T, C).
/// qkv_w (C, 3C) with columns [q | k | v], head h owns columns h*d..h*d+d.
/// bias(h, i, j) and mask(i, j) are optional additive terms.
inline std::vector<double> dense_attention(
    const std::vector<double>& x, std::size_t T, std::size_t C, std::size_t heads,
    std::span<const double> qkv_w, std::span<const double> qkv_b, std::span<const double> proj_w,
    std::span<const double> proj_b,
    const std::function<double(std::size_t, std::size_t, std::size_t)>& bias,
    const std::function<double(std::size_t, std::size_t)>& mask) {
  const std::size_t d = C / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> qkv(T * 3 * C, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t o = 0; o < 3 * C; ++o) {
      double s = qkv_b.empty() ? 0.0 : qkv_b[o];
      for (std::size_t i = 0; i < C; ++i) s += x[t * C + i] * qkv_w[i * 3 * C + o];
      qkv[t * 3 * C + o] = s;
    }
  std::vector<double> ctx(T * C, 0.0);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < T; ++i) {
      std::vector<double> score(T);
      double mx = -INFINITY;
      for (std::size_t j = 0; j < T; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k)
          s += qkv[i * 3 * C + h * d + k] * qkv[j * 3 * C + C + h * d + k];
        s *= scale;
        if (bias) s += bias(h, i, j);
        if (mask) s += mask(i, j);
        score[j] = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (auto& s : score) z += (s = std::exp(s - mx));
      for (std::size_t j = 0; j < T; ++j)
        for (std::size_t k = 0; k < d; ++k)
          ctx[i * C + h * d + k] += score[j] / z * qkv[j * 3 * C + 2 * C + h * d + k];
    }
  std::vector<double> out(T * C, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t o = 0; o < C; ++o) {
      double s = proj_b.empty() ? 0.0 : proj_b[o];
      for (std::size_t i = 0; i < C; ++i) s += ctx[t * C + i] * proj_w[i * C + o];
      out[t * C + o] = s;
    }
  return out;
}

// Pre-shift sub-window id of original coordinate o along an axis of length n
// when the shifted partition starts at s: [0, s) is the wrap piece.
inline long sub_window(std::size_t o, std::size_t s, std::size_t M) {
  return o < s ? -1 : static_cast<long>((o - s) / M);
}

// Shifted-window attention computed in the original frame: each token
// attends only to tokens of its own sub-window, with the relative bias of
// their true displacement.
inline std::vector<double> sub_window_oracle(const Tensor& x, const WindowAttnParams& p,
                                      std::size_t s) {
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2), M = p.window, nh = p.heads;
  std::vector<double> out(H * W * C, 0.0);
  std::map<std::pair<long, long>, std::vector<std::pair<std::size_t, std::size_t>>> groups;
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) groups[{sub_window(i, s, M), sub_window(j, s, M)}].push_back({i, j});
  for (const auto& [key, members] : groups) {
    const std::size_t T = members.size();
    std::vector<double> tokens(T * C);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < C; ++c)
        tokens[t * C + c] = x[(members[t].first * W + members[t].second) * C + c];
    // Displacement inside a sub-window never wraps, so the rolled-frame
    // offsets equal the original ones.
    auto bias = [&](std::size_t h, std::size_t a, std::size_t b) {
      const auto [ya, xa] = members[a];
      const auto [yb, xb] = members[b];
      const long dy = static_cast<long>(ya) - static_cast<long>(yb);
      const long dx = static_cast<long>(xa) - static_cast<long>(xb);
      const std::size_t row = static_cast<std::size_t>((dy + static_cast<long>(M) - 1) *
                                                           static_cast<long>(2 * M - 1) +
                                                       dx + static_cast<long>(M) - 1);
      return p.bias_table[row * nh + h];
    };
    auto y = dense_attention(tokens, T, C, nh, p.qkv_w.data(), p.qkv_b.data(), p.proj_w.data(),
                             p.proj_b.data(), bias, {});
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < C; ++c)
        out[(members[t].first * W + members[t].second) * C + c] = y[t * C + c];
  }
  return out;
}

// Pixel weight map, weighted BCE and weighted IoU over (H, W, 1) maps.
inline std::vector<double> weight_oracle(const Tensor& g, double lambda, std::size_t k) {
  const long h = static_cast<long>(g.dim(0)), w = static_cast<long>(g.dim(1));
  const long r = static_cast<long>(k / 2);
  std::vector<double> out(g.size());
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double s = 0.0;
      long n = 0;
      for (long dy = -r; dy <= r; ++dy)
        for (long dx = -r; dx <= r; ++dx) {
          const long yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
          s += g[yy * w + xx];
          ++n;
        }
      out[y * w + x] = 1.0 + lambda * std::abs(s / static_cast<double>(n) - g[y * w + x]);
    }
  return out;
}

inline double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double bce_oracle(const Tensor& z, const Tensor& g, std::span<const double> w) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double p = sigmoid_ref(z[i]);
    num += w[i] * -(g[i] * std::log(p) + (1.0 - g[i]) * std::log(1.0 - p));
    den += w[i];
  }
  return num / den;
}

inline double iou_oracle(const Tensor& z, const Tensor& g, std::span<const double> w) {
  double inter = 0.0, uni = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double p = sigmoid_ref(z[i]);
    inter += w[i] * p * g[i];
    uni += w[i] * (p + g[i] - p * g[i]);
  }
  return uni <= 1e-12 ? 0.0 : 1.0 - inter / uni;
}

}  // namespace dstu::test
