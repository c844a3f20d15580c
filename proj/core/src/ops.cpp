#include "dstu/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace dstu {

namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

[[noreturn]] void shape_fail(const char* op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

std::string dim_str(const char* name, std::size_t axis, std::size_t got, std::size_t want) {
  return std::string(name) + " dimension " + std::to_string(axis) + " is " + std::to_string(got) +
         ", expected " + std::to_string(want);
}

void require_defined(const char* op, const Tensor& t, const char* name) {
  if (!t.defined()) shape_fail(op, std::string(name) + " is undefined");
}

// C[n, m] += A[n, k] * B[k, m]
void gemm_acc(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
              std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = c + i * m;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA[n, k] += dC[n, m] * B[k, m]^T
void gemm_acc_bt(const double* dc, const double* b, double* da, std::size_t n, std::size_t k,
                 std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* grow = dc + i * m;
    double* arow = da + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * m;
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += grow[j] * brow[j];
      arow[p] += s;
    }
  }
}

// dB[k, m] += A[n, k]^T * dC[n, m]
void gemm_acc_at(const double* a, const double* dc, double* db, std::size_t n, std::size_t k,
                 std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    const double* grow = dc + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* brow = db + p * m;
      for (std::size_t j = 0; j < m; ++j) brow[j] += av * grow[j];
    }
  }
}

// Size of the trailing block that `b` covers when broadcast against `a`.
std::size_t suffix_block(const char* op, const Shape& a, const Shape& b) {
  if (b.size() > a.size()) shape_fail(op, "rhs rank exceeds lhs rank");
  const std::size_t off = a.size() - b.size();
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (a[off + i] != b[i]) shape_fail(op, dim_str("rhs", i, b[i], a[off + i]));
  }
  return numel(b);
}

Shape strides_of(const Shape& s) {
  Shape st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined("matmul", a, "lhs");
  require_defined("matmul", b, "rhs");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2) shape_fail("matmul", "lhs must have rank >= 2");
  if (bs.size() == 2) {
    const std::size_t k = as.back();
    if (bs[0] != k) shape_fail("matmul", dim_str("rhs", 0, bs[0], k));
    const std::size_t m = bs[1];
    const std::size_t n = a.size() / k;
    std::vector<double> out(n * m, 0.0);
    gemm_acc(a.data().data(), b.data().data(), out.data(), n, k, m);
    Shape os = as;
    os.back() = m;
    ImplPtr ai = a.impl(), bi = b.impl();
    return make_result("matmul", std::move(os), std::move(out), {a, b},
                       [ai, bi, n, k, m](const TensorImpl& o) {
                         if (ai->requires_grad)
                           gemm_acc_bt(o.grad.data(), bi->data.data(),
                                       ai->grad_buffer().data(), n, k, m);
                         if (bi->requires_grad)
                           gemm_acc_at(ai->data.data(), o.grad.data(),
                                       bi->grad_buffer().data(), n, k, m);
                       });
  }
  if (as.size() != 3 || bs.size() != 3) shape_fail("matmul", "batched form needs rank-3 operands");
  const std::size_t batch = as[0], n = as[1], k = as[2], m = bs[2];
  if (bs[0] != batch) shape_fail("matmul", dim_str("rhs", 0, bs[0], batch));
  if (bs[1] != k) shape_fail("matmul", dim_str("rhs", 1, bs[1], k));
  std::vector<double> out(batch * n * m, 0.0);
  for (std::size_t t = 0; t < batch; ++t) {
    gemm_acc(a.data().data() + t * n * k, b.data().data() + t * k * m, out.data() + t * n * m, n,
             k, m);
  }
  ImplPtr ai = a.impl(), bi = b.impl();
  return make_result("matmul", Shape{batch, n, m}, std::move(out), {a, b},
                     [ai, bi, batch, n, k, m](const TensorImpl& o) {
                       for (std::size_t t = 0; t < batch; ++t) {
                         const double* g = o.grad.data() + t * n * m;
                         if (ai->requires_grad)
                           gemm_acc_bt(g, bi->data.data() + t * k * m,
                                       ai->grad_buffer().data() + t * n * k, n, k, m);
                         if (bi->requires_grad)
                           gemm_acc_at(ai->data.data() + t * n * k, g,
                                       bi->grad_buffer().data() + t * k * m, n, k, m);
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined("add", a, "lhs");
  require_defined("add", b, "rhs");
  const std::size_t block = suffix_block("add", a.shape(), b.shape());
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i % block];
  ImplPtr ai = a.impl(), bi = b.impl();
  return make_result("add", a.shape(), std::move(out), {a, b},
                     [ai, bi, block](const TensorImpl& o) {
                       if (ai->requires_grad) {
                         auto& g = ai->grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                       }
                       if (bi->requires_grad) {
                         auto& g = bi->grad_buffer();
                         for (std::size_t i = 0; i < o.grad.size(); ++i) g[i % block] += o.grad[i];
                       }
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined("mul", a, "lhs");
  require_defined("mul", b, "rhs");
  const std::size_t block = suffix_block("mul", a.shape(), b.shape());
  std::vector<double> out(a.size());
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i % block];
  ImplPtr ai = a.impl(), bi = b.impl();
  return make_result("mul", a.shape(), std::move(out), {a, b},
                     [ai, bi, block](const TensorImpl& o) {
                       if (ai->requires_grad) {
                         auto& g = ai->grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += o.grad[i] * bi->data[i % block];
                       }
                       if (bi->requires_grad) {
                         auto& g = bi->grad_buffer();
                         for (std::size_t i = 0; i < o.grad.size(); ++i)
                           g[i % block] += o.grad[i] * ai->data[i];
                       }
                     });
}

Tensor scale(const Tensor& x, double factor) {
  require_defined("scale", x, "input");
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  ImplPtr xi = x.impl();
  return make_result("scale", x.shape(), std::move(out), {x},
                     [xi, factor](const TensorImpl& o) {
                       auto& g = xi->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * factor;
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) shape_fail("concat", "no inputs");
  for (const auto& p : parts) require_defined("concat", p, "part");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) shape_fail("concat", "axis out of range");
  Shape os = s0;
  os[axis] = 0;
  std::vector<std::size_t> widths;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const Shape& s = parts[pi].shape();
    if (s.size() != s0.size()) shape_fail("concat", "part ranks differ");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != s0[d])
        shape_fail("concat", dim_str(("part " + std::to_string(pi)).c_str(), d, s[d], s0[d]));
    }
    os[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
  for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];
  for (const auto& p : parts) widths.push_back(p.shape()[axis] * inner);
  const std::size_t row = os[axis] * inner;
  std::vector<double> out(outer * row);
  std::size_t off = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto pd = parts[pi].data();
    const std::size_t w = widths[pi];
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pd.data() + o * w, w, out.data() + o * row + off);
    off += w;
  }
  std::vector<ImplPtr> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  return make_result("concat", std::move(os), std::move(out), parts,
                     [impls, widths, outer, row](const TensorImpl& o) {
                       std::size_t off = 0;
                       for (std::size_t pi = 0; pi < impls.size(); ++pi) {
                         const std::size_t w = widths[pi];
                         if (impls[pi]->requires_grad) {
                           auto& g = impls[pi]->grad_buffer();
                           for (std::size_t r = 0; r < outer; ++r)
                             for (std::size_t j = 0; j < w; ++j)
                               g[r * w + j] += o.grad[r * row + off + j];
                         }
                         off += w;
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined("reshape", x, "input");
  if (numel(shape) != x.size())
    shape_fail("reshape", "cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  ImplPtr xi = x.impl();
  return make_result("reshape", std::move(shape), std::move(out), {x},
                     [xi](const TensorImpl& o) {
                       auto& g = xi->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                     });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  require_defined("permute", x, "input");
  const Shape& s = x.shape();
  const std::size_t r = s.size();
  if (axes.size() != r) shape_fail("permute", "axis count does not match rank");
  std::vector<bool> used(r, false);
  for (auto a : axes) {
    if (a >= r || used[a]) shape_fail("permute", "axes are not a permutation");
    used[a] = true;
  }
  Shape os(r);
  for (std::size_t i = 0; i < r; ++i) os[i] = s[axes[i]];
  const Shape in_st = strides_of(s);
  // Source stride for each output axis.
  Shape src_st(r);
  for (std::size_t i = 0; i < r; ++i) src_st[i] = in_st[axes[i]];
  const std::size_t n = x.size();
  // map[out_index] = in_index
  auto map = std::make_shared<std::vector<std::size_t>>(n);
  {
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t o = 0; o < n; ++o) {
      (*map)[o] = src;
      for (std::size_t d = r; d-- > 0;) {
        ++idx[d];
        src += src_st[d];
        if (idx[d] < os[d]) break;
        src -= src_st[d] * os[d];
        idx[d] = 0;
      }
    }
  }
  std::vector<double> out(n);
  const auto xd = x.data();
  for (std::size_t o = 0; o < n; ++o) out[o] = xd[(*map)[o]];
  ImplPtr xi = x.impl();
  return make_result("permute", std::move(os), std::move(out), {x},
                     [xi, map](const TensorImpl& o) {
                       auto& g = xi->grad_buffer();
                       for (std::size_t i = 0; i < o.grad.size(); ++i) g[(*map)[i]] += o.grad[i];
                     });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  require_defined("slice", x, "input");
  const Shape& s = x.shape();
  if (axis >= s.size()) shape_fail("slice", "axis out of range");
  if (length == 0 || start + length > s[axis])
    shape_fail("slice", "range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                            ") exceeds dimension " + std::to_string(axis) + " of extent " +
                            std::to_string(s[axis]));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t in_row = s[axis] * inner, out_row = length * inner, off = start * inner;
  std::vector<double> out(outer * out_row);
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xd.data() + o * in_row + off, out_row, out.data() + o * out_row);
  Shape os = s;
  os[axis] = length;
  ImplPtr xi = x.impl();
  return make_result("slice", std::move(os), std::move(out), {x},
                     [xi, outer, in_row, out_row, off](const TensorImpl& o) {
                       auto& g = xi->grad_buffer();
                       for (std::size_t r = 0; r < outer; ++r)
                         for (std::size_t j = 0; j < out_row; ++j)
                           g[r * in_row + off + j] += o.grad[r * out_row + j];
                     });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require_defined("softmax", x, "input");
  const Shape& s = x.shape();
  if (axis >= s.size()) shape_fail("softmax", "axis out of range");
  std::size_t outer = 1, inner = 1;
  const std::size_t len = s[axis];
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const auto xd = x.data();
  auto y = std::make_shared<std::vector<double>>(x.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = xd[base];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, xd[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double e = std::exp(xd[base + k * inner] - mx);
        (*y)[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < len; ++k) (*y)[base + k * inner] /= z;
    }
  }
  ImplPtr xi = x.impl();
  return make_result("softmax", s, *y, {x},
                     [xi, y, outer, inner, len](const TensorImpl& o) {
                       auto& g = xi->grad_buffer();
                       for (std::size_t a = 0; a < outer; ++a) {
                         for (std::size_t in = 0; in < inner; ++in) {
                           const std::size_t base = a * len * inner + in;
                           double dot = 0.0;
                           for (std::size_t k = 0; k < len; ++k)
                             dot += o.grad[base + k * inner] * (*y)[base + k * inner];
                           for (std::size_t k = 0; k < len; ++k) {
                             const std::size_t i = base + k * inner;
                             g[i] += (*y)[i] * (o.grad[i] - dot);
                           }
                         }
                       }
                     });
}

namespace {

// Shared normalization kernel. Each of `rows` slices is a set of `count`
// elements reached by `index(row, j)`; affine parameters are indexed by
// `channel(row, j)`.
struct NormStats {
  std::vector<double> xhat;
  std::vector<double> rstd;
};

}  // namespace

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_defined("layernorm", x, "input");
  if (!(eps > 0.0)) shape_fail("layernorm", "eps must be positive");
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.size() / c;
  if (gamma.defined() && gamma.shape() != Shape{c})
    shape_fail("layernorm", dim_str("gamma", 0, gamma.size(), c));
  if (beta.defined() && beta.shape() != Shape{c})
    shape_fail("layernorm", dim_str("beta", 0, beta.size(), c));
  auto st = std::make_shared<NormStats>();
  st->xhat.resize(x.size());
  st->rstd.resize(rows);
  const auto xd = x.data();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    const double rs = 1.0 / std::sqrt(var + eps);
    st->rstd[r] = rs;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (row[j] - mu) * rs;
      st->xhat[r * c + j] = h;
      double v = h;
      if (gamma.defined()) v *= gamma.data()[j];
      if (beta.defined()) v += beta.data()[j];
      out[r * c + j] = v;
    }
  }
  std::vector<Tensor> inputs{x};
  if (gamma.defined()) inputs.push_back(gamma);
  if (beta.defined()) inputs.push_back(beta);
  ImplPtr xi = x.impl();
  ImplPtr gi = gamma.defined() ? gamma.impl() : nullptr;
  ImplPtr bi = beta.defined() ? beta.impl() : nullptr;
  return make_result(
      "layernorm", x.shape(), std::move(out), inputs,
      [xi, gi, bi, st, rows, c](const TensorImpl& o) {
        std::vector<double> dh(c);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* g = o.grad.data() + r * c;
          const double* h = st->xhat.data() + r * c;
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            dh[j] = g[j] * (gi ? gi->data[j] : 1.0);
            m1 += dh[j];
            m2 += dh[j] * h[j];
          }
          m1 /= static_cast<double>(c);
          m2 /= static_cast<double>(c);
          if (xi->requires_grad) {
            auto& gx = xi->grad_buffer();
            for (std::size_t j = 0; j < c; ++j)
              gx[r * c + j] += st->rstd[r] * (dh[j] - m1 - h[j] * m2);
          }
          if (gi && gi->requires_grad) {
            auto& gg = gi->grad_buffer();
            for (std::size_t j = 0; j < c; ++j) gg[j] += g[j] * h[j];
          }
          if (bi && bi->requires_grad) {
            auto& gb = bi->grad_buffer();
            for (std::size_t j = 0; j < c; ++j) gb[j] += g[j];
          }
        }
      });
}

Tensor groupnorm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta,
                 double eps) {
  require_defined("groupnorm", x, "input");
  if (!(eps > 0.0)) shape_fail("groupnorm", "eps must be positive");
  if (x.rank() != 3) shape_fail("groupnorm", "input must be (H, W, C)");
  const std::size_t c = x.shape()[2];
  const std::size_t hw = x.shape()[0] * x.shape()[1];
  if (groups == 0 || c % groups != 0)
    shape_fail("groupnorm", "channel count " + std::to_string(c) + " not divisible by " +
                                std::to_string(groups) + " groups");
  if (gamma.defined() && gamma.shape() != Shape{c})
    shape_fail("groupnorm", dim_str("gamma", 0, gamma.size(), c));
  if (beta.defined() && beta.shape() != Shape{c})
    shape_fail("groupnorm", dim_str("beta", 0, beta.size(), c));
  const std::size_t cg = c / groups;
  const double count = static_cast<double>(hw * cg);
  auto st = std::make_shared<NormStats>();
  st->xhat.resize(x.size());
  st->rstd.resize(groups);
  const auto xd = x.data();
  for (std::size_t g = 0; g < groups; ++g) {
    double mu = 0.0;
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t j = 0; j < cg; ++j) mu += xd[p * c + g * cg + j];
    mu /= count;
    double var = 0.0;
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t j = 0; j < cg; ++j) {
        const double d = xd[p * c + g * cg + j] - mu;
        var += d * d;
      }
    var /= count;
    const double rs = 1.0 / std::sqrt(var + eps);
    st->rstd[g] = rs;
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t j = 0; j < cg; ++j) {
        const std::size_t i = p * c + g * cg + j;
        st->xhat[i] = (xd[i] - mu) * rs;
      }
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t ch = i % c;
    double v = st->xhat[i];
    if (gamma.defined()) v *= gamma.data()[ch];
    if (beta.defined()) v += beta.data()[ch];
    out[i] = v;
  }
  std::vector<Tensor> inputs{x};
  if (gamma.defined()) inputs.push_back(gamma);
  if (beta.defined()) inputs.push_back(beta);
  ImplPtr xi = x.impl();
  ImplPtr gi = gamma.defined() ? gamma.impl() : nullptr;
  ImplPtr bi = beta.defined() ? beta.impl() : nullptr;
  return make_result(
      "groupnorm", x.shape(), std::move(out), inputs,
      [xi, gi, bi, st, groups, cg, c, hw, count](const TensorImpl& o) {
        std::vector<double> dh(o.grad.size());
        for (std::size_t i = 0; i < dh.size(); ++i)
          dh[i] = o.grad[i] * (gi ? gi->data[i % c] : 1.0);
        if (xi->requires_grad) {
          auto& gx = xi->grad_buffer();
          for (std::size_t g = 0; g < groups; ++g) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t p = 0; p < hw; ++p)
              for (std::size_t j = 0; j < cg; ++j) {
                const std::size_t i = p * c + g * cg + j;
                m1 += dh[i];
                m2 += dh[i] * st->xhat[i];
              }
            m1 /= count;
            m2 /= count;
            for (std::size_t p = 0; p < hw; ++p)
              for (std::size_t j = 0; j < cg; ++j) {
                const std::size_t i = p * c + g * cg + j;
                gx[i] += st->rstd[g] * (dh[i] - m1 - st->xhat[i] * m2);
              }
          }
        }
        if (gi && gi->requires_grad) {
          auto& gg = gi->grad_buffer();
          for (std::size_t i = 0; i < o.grad.size(); ++i) gg[i % c] += o.grad[i] * st->xhat[i];
        }
        if (bi && bi->requires_grad) {
          auto& gb = bi->grad_buffer();
          for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i % c] += o.grad[i];
        }
      });
}

Tensor gelu(const Tensor& x) {
  require_defined("gelu", x, "input");
  const auto xd = x.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 0.5 * xd[i] * (1.0 + std::erf(xd[i] * std::numbers::sqrt2 / 2.0));
  ImplPtr xi = x.impl();
  return make_result("gelu", x.shape(), std::move(out), {x}, [xi](const TensorImpl& o) {
    auto& g = xi->grad_buffer();
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xi->data[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] += o.grad[i] * (cdf + v * pdf);
    }
  });
}

namespace {
thread_local std::uint64_t g_relu_digest = 0xcbf29ce484222325ULL;
}  // namespace

std::uint64_t relu_pattern_digest() { return g_relu_digest; }
void reset_relu_pattern_digest() { g_relu_digest = 0xcbf29ce484222325ULL; }

Tensor relu(const Tensor& x) {
  require_defined("relu", x, "input");
  const auto xd = x.data();
  std::vector<double> out(x.size());
  std::uint64_t d = g_relu_digest;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const bool on = xd[i] > 0.0;
    out[i] = on ? xd[i] : 0.0;
    d = (d ^ (on ? 0x9fu : 0x35u)) * 0x100000001b3ULL;  // FNV-1a step
  }
  g_relu_digest = d;
  ImplPtr xi = x.impl();
  return make_result("relu", x.shape(), std::move(out), {x}, [xi](const TensorImpl& o) {
    auto& g = xi->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xi->data[i] > 0.0) g[i] += o.grad[i];
  });
}

Tensor sigmoid(const Tensor& x) {
  require_defined("sigmoid", x, "input");
  const auto xd = x.data();
  auto y = std::make_shared<std::vector<double>>(x.size());
  for (std::size_t i = 0; i < y->size(); ++i) {
    const double v = xd[i];
    (*y)[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  ImplPtr xi = x.impl();
  return make_result("sigmoid", x.shape(), *y, {x}, [xi, y](const TensorImpl& o) {
    auto& g = xi->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * (*y)[i] * (1.0 - (*y)[i]);
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
  require_defined("conv2d", x, "input");
  require_defined("conv2d", weight, "weight");
  if (x.rank() != 3) shape_fail("conv2d", "input must be (H, W, Cin)");
  if (weight.rank() != 4) shape_fail("conv2d", "weight must be (kh, kw, Cin, Cout)");
  if (stride == 0) shape_fail("conv2d", "stride must be positive");
  const std::size_t h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  const std::size_t kh = weight.dim(0), kw = weight.dim(1), cout = weight.dim(3);
  if (weight.dim(2) != cin) shape_fail("conv2d", dim_str("weight", 2, weight.dim(2), cin));
  if (bias.defined() && bias.shape() != Shape{cout})
    shape_fail("conv2d", dim_str("bias", 0, bias.size(), cout));
  if (h + 2 * pad < kh || w + 2 * pad < kw) shape_fail("conv2d", "kernel larger than input");
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::size_t wo = (w + 2 * pad - kw) / stride + 1;
  const std::size_t patch = kh * kw * cin;
  const std::size_t npos = ho * wo;

  // im2col; entry -1 marks zero padding.
  auto src = std::make_shared<std::vector<long>>(npos * kh * kw);
  for (std::size_t oy = 0; oy < ho; ++oy)
    for (std::size_t ox = 0; ox < wo; ++ox)
      for (std::size_t ky = 0; ky < kh; ++ky)
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
          long s = -1;
          if (iy >= 0 && ix >= 0 && iy < static_cast<long>(h) && ix < static_cast<long>(w))
            s = (iy * static_cast<long>(w) + ix) * static_cast<long>(cin);
          (*src)[((oy * wo + ox) * kh + ky) * kw + kx] = s;
        }
  const auto xd = x.data();
  auto col = std::make_shared<std::vector<double>>(npos * patch, 0.0);
  for (std::size_t p = 0; p < npos * kh * kw; ++p) {
    const long s = (*src)[p];
    if (s >= 0) std::copy_n(xd.data() + s, cin, col->data() + p * cin);
  }
  std::vector<double> out(npos * cout, 0.0);
  if (bias.defined())
    for (std::size_t p = 0; p < npos; ++p)
      std::copy_n(bias.data().data(), cout, out.data() + p * cout);
  gemm_acc(col->data(), weight.data().data(), out.data(), npos, patch, cout);

  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  ImplPtr xi = x.impl(), wi = weight.impl();
  ImplPtr bi = bias.defined() ? bias.impl() : nullptr;
  return make_result(
      "conv2d", Shape{ho, wo, cout}, std::move(out), inputs,
      [xi, wi, bi, src, col, npos, patch, cout, cin, kh, kw](const TensorImpl& o) {
        if (wi->requires_grad)
          gemm_acc_at(col->data(), o.grad.data(), wi->grad_buffer().data(), npos, patch, cout);
        if (bi && bi->requires_grad) {
          auto& gb = bi->grad_buffer();
          for (std::size_t p = 0; p < npos; ++p)
            for (std::size_t j = 0; j < cout; ++j) gb[j] += o.grad[p * cout + j];
        }
        if (xi->requires_grad) {
          std::vector<double> dcol(npos * patch, 0.0);
          gemm_acc_bt(o.grad.data(), wi->data.data(), dcol.data(), npos, patch, cout);
          auto& gx = xi->grad_buffer();
          for (std::size_t p = 0; p < npos * kh * kw; ++p) {
            const long s = (*src)[p];
            if (s < 0) continue;
            for (std::size_t j = 0; j < cin; ++j) gx[s + j] += dcol[p * cin + j];
          }
        }
      });
}

Tensor avgpool_spatial(const Tensor& x) {
  require_defined("avgpool_spatial", x, "input");
  if (x.rank() < 2) shape_fail("avgpool_spatial", "input must have a token axis");
  const std::size_t c = x.shape().back();
  const std::size_t n = x.size() / c;
  std::vector<double> out(c, 0.0);
  const auto xd = x.data();
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < c; ++j) out[j] += xd[t * c + j];
  for (auto& v : out) v /= static_cast<double>(n);
  ImplPtr xi = x.impl();
  return make_result("avgpool_spatial", Shape{1, c}, std::move(out), {x},
                     [xi, n, c](const TensorImpl& o) {
                       auto& g = xi->grad_buffer();
                       const double inv = 1.0 / static_cast<double>(n);
                       for (std::size_t t = 0; t < n; ++t)
                         for (std::size_t j = 0; j < c; ++j) g[t * c + j] += o.grad[j] * inv;
                     });
}

Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
  require_defined("upsample_nearest", x, "input");
  if (x.rank() != 3) shape_fail("upsample_nearest", "input must be (H, W, C)");
  if (factor == 0) shape_fail("upsample_nearest", "factor must be positive");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const std::size_t ho = h * factor, wo = w * factor;
  std::vector<double> out(ho * wo * c);
  const auto xd = x.data();
  for (std::size_t i = 0; i < ho; ++i)
    for (std::size_t j = 0; j < wo; ++j)
      std::copy_n(xd.data() + ((i / factor) * w + j / factor) * c, c,
                  out.data() + (i * wo + j) * c);
  ImplPtr xi = x.impl();
  return make_result("upsample_nearest", Shape{ho, wo, c}, std::move(out), {x},
                     [xi, factor, w, c, ho, wo](const TensorImpl& o) {
                       auto& g = xi->grad_buffer();
                       for (std::size_t i = 0; i < ho; ++i)
                         for (std::size_t j = 0; j < wo; ++j) {
                           const std::size_t s = ((i / factor) * w + j / factor) * c;
                           const std::size_t d = (i * wo + j) * c;
                           for (std::size_t k = 0; k < c; ++k) g[s + k] += o.grad[d + k];
                         }
                     });
}

Tensor roll2d(const Tensor& x, long shift_h, long shift_w) {
  require_defined("roll2d", x, "input");
  if (x.rank() != 3) shape_fail("roll2d", "input must be (H, W, C)");
  const long h = static_cast<long>(x.dim(0)), w = static_cast<long>(x.dim(1));
  const std::size_t c = x.dim(2);
  const long sh = ((shift_h % h) + h) % h;
  const long sw = ((shift_w % w) + w) % w;
  // dst[p] = src[map[p]] at token granularity
  auto map = std::make_shared<std::vector<std::size_t>>(static_cast<std::size_t>(h * w));
  for (long i = 0; i < h; ++i)
    for (long j = 0; j < w; ++j)
      (*map)[static_cast<std::size_t>(((i + sh) % h) * w + (j + sw) % w)] =
          static_cast<std::size_t>(i * w + j);
  std::vector<double> out(x.size());
  const auto xd = x.data();
  for (std::size_t p = 0; p < map->size(); ++p)
    std::copy_n(xd.data() + (*map)[p] * c, c, out.data() + p * c);
  ImplPtr xi = x.impl();
  return make_result("roll2d", x.shape(), std::move(out), {x}, [xi, map, c](const TensorImpl& o) {
    auto& g = xi->grad_buffer();
    for (std::size_t p = 0; p < map->size(); ++p)
      for (std::size_t k = 0; k < c; ++k) g[(*map)[p] * c + k] += o.grad[p * c + k];
  });
}

Tensor masked_add(const Tensor& scores, const Tensor& mask) {
  require_defined("masked_add", scores, "scores");
  require_defined("masked_add", mask, "mask");
  if (scores.rank() != 4) shape_fail("masked_add", "scores must be (nW, heads, T, T)");
  if (mask.rank() != 3) shape_fail("masked_add", "mask must be (nW, T, T)");
  const std::size_t nw = scores.dim(0), heads = scores.dim(1), t = scores.dim(2);
  if (scores.dim(3) != t) shape_fail("masked_add", dim_str("scores", 3, scores.dim(3), t));
  if (mask.dim(0) != nw) shape_fail("masked_add", dim_str("mask", 0, mask.dim(0), nw));
  if (mask.dim(1) != t) shape_fail("masked_add", dim_str("mask", 1, mask.dim(1), t));
  if (mask.dim(2) != t) shape_fail("masked_add", dim_str("mask", 2, mask.dim(2), t));
  std::vector<double> out(scores.data().begin(), scores.data().end());
  const auto md = mask.data();
  const std::size_t tt = t * t;
  for (std::size_t win = 0; win < nw; ++win)
    for (std::size_t hd = 0; hd < heads; ++hd)
      for (std::size_t k = 0; k < tt; ++k) out[(win * heads + hd) * tt + k] += md[win * tt + k];
  ImplPtr si = scores.impl();
  return make_result("masked_add", scores.shape(), std::move(out), {scores, mask},
                     [si](const TensorImpl& o) {
                       if (!si->requires_grad) return;
                       auto& g = si->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                     });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> index) {
  require_defined("gather_rows", table, "table");
  if (table.rank() != 2) shape_fail("gather_rows", "table must be (R, C)");
  if (index.empty()) shape_fail("gather_rows", "empty index");
  const std::size_t r = table.dim(0), c = table.dim(1);
  auto idx = std::make_shared<std::vector<std::size_t>>(index.begin(), index.end());
  std::vector<double> out(idx->size() * c);
  const auto td = table.data();
  for (std::size_t i = 0; i < idx->size(); ++i) {
    if ((*idx)[i] >= r)
      shape_fail("gather_rows", "index " + std::to_string((*idx)[i]) + " exceeds row count " +
                                    std::to_string(r));
    std::copy_n(td.data() + (*idx)[i] * c, c, out.data() + i * c);
  }
  ImplPtr ti = table.impl();
  return make_result("gather_rows", Shape{idx->size(), c}, std::move(out), {table},
                     [ti, idx, c](const TensorImpl& o) {
                       auto& g = ti->grad_buffer();
                       for (std::size_t i = 0; i < idx->size(); ++i)
                         for (std::size_t k = 0; k < c; ++k)
                           g[(*idx)[i] * c + k] += o.grad[i * c + k];
                     });
}

Tensor sum(const Tensor& x) {
  require_defined("sum", x, "input");
  double s = 0.0;
  for (double v : x.data()) s += v;
  ImplPtr xi = x.impl();
  return make_result("sum", Shape{1}, {s}, {x}, [xi](const TensorImpl& o) {
    auto& g = xi->grad_buffer();
    for (auto& v : g) v += o.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

}  // namespace dstu
