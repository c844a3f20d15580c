#include "dstu/attention.hpp"

#include <cmath>

#include "dstu/ops.hpp"

namespace dstu {

namespace {
thread_local std::size_t g_transformer_block_calls = 0;

void require_map(const char* op, const Tensor& x) {
  if (!x.defined() || x.rank() != 3) throw ShapeError(std::string(op) + ": input must be (H, W, C)");
}
}  // namespace

LayerNormParams make_layernorm(ParamStore& store, const std::string& prefix, std::size_t dim) {
  return {store.ones(prefix + ".weight", {dim}), store.zeros(prefix + ".bias", {dim})};
}

MlpParams make_mlp(ParamStore& store, const std::string& prefix, std::size_t dim,
                   std::size_t hidden) {
  MlpParams p;
  p.fc1_w = store.weight(prefix + ".fc1.weight", {dim, hidden});
  p.fc1_b = store.zeros(prefix + ".fc1.bias", {hidden});
  p.fc2_w = store.weight(prefix + ".fc2.weight", {hidden, dim});
  p.fc2_b = store.zeros(prefix + ".fc2.bias", {dim});
  return p;
}

WindowAttnParams make_window_attn(ParamStore& store, const std::string& prefix, std::size_t dim,
                                  std::size_t heads, std::size_t window) {
  if (heads == 0 || dim % heads != 0)
    throw ShapeError("window attention: dim " + std::to_string(dim) + " not divisible by " +
                     std::to_string(heads) + " heads");
  if (window == 0) throw ShapeError("window attention: window size must be positive");
  WindowAttnParams p;
  p.dim = dim;
  p.heads = heads;
  p.window = window;
  p.qkv_w = store.weight(prefix + ".qkv.weight", {dim, 3 * dim});
  p.qkv_b = store.zeros(prefix + ".qkv.bias", {3 * dim});
  p.proj_w = store.weight(prefix + ".proj.weight", {dim, dim});
  p.proj_b = store.zeros(prefix + ".proj.bias", {dim});
  const std::size_t span = 2 * window - 1;
  p.bias_table = store.zeros(prefix + ".relative_position_bias_table", {span * span, heads});
  p.rel_index = relative_position_index(window);
  return p;
}

SwinBlockParams make_swin_block(ParamStore& store, const std::string& prefix, std::size_t dim,
                                std::size_t heads, std::size_t window, std::size_t shift) {
  if (shift != 0 && shift >= window)
    throw ShapeError("swin block: shift " + std::to_string(shift) + " must be below window " +
                     std::to_string(window));
  SwinBlockParams p;
  p.shift = shift;
  p.norm1 = make_layernorm(store, prefix + ".norm1", dim);
  p.attn = make_window_attn(store, prefix + ".attn", dim, heads, window);
  p.norm2 = make_layernorm(store, prefix + ".norm2", dim);
  p.mlp = make_mlp(store, prefix + ".mlp", dim, 4 * dim);
  return p;
}

TransformerBlockParams make_transformer_block(ParamStore& store, const std::string& prefix,
                                              std::size_t dim, std::size_t heads) {
  if (heads == 0 || dim % heads != 0)
    throw ShapeError("transformer block: dim " + std::to_string(dim) + " not divisible by " +
                     std::to_string(heads) + " heads");
  TransformerBlockParams p;
  p.dim = dim;
  p.heads = heads;
  p.norm1 = make_layernorm(store, prefix + ".norm1", dim);
  p.qkv_w = store.weight(prefix + ".attn.qkv.weight", {dim, 3 * dim});
  p.qkv_b = store.zeros(prefix + ".attn.qkv.bias", {3 * dim});
  p.proj_w = store.weight(prefix + ".attn.proj.weight", {dim, dim});
  p.proj_b = store.zeros(prefix + ".attn.proj.bias", {dim});
  p.norm2 = make_layernorm(store, prefix + ".norm2", dim);
  p.mlp = make_mlp(store, prefix + ".mlp", dim, 4 * dim);
  return p;
}

Tensor apply_layernorm(const Tensor& x, const LayerNormParams& p) {
  return layernorm(x, p.gamma, p.beta, 1e-5);
}

Tensor apply_mlp(const Tensor& x, const MlpParams& p) {
  return linear(gelu(linear(x, p.fc1_w, p.fc1_b)), p.fc2_w, p.fc2_b);
}

std::vector<std::size_t> relative_position_index(std::size_t window) {
  const std::size_t t = window * window;
  const std::size_t span = 2 * window - 1;
  std::vector<std::size_t> index(t * t);
  for (std::size_t i = 0; i < t; ++i) {
    const std::size_t yi = i / window, xi = i % window;
    for (std::size_t j = 0; j < t; ++j) {
      const std::size_t yj = j / window, xj = j % window;
      const std::size_t dy = yi + window - 1 - yj;
      const std::size_t dx = xi + window - 1 - xj;
      index[i * t + j] = dy * span + dx;
    }
  }
  return index;
}

Tensor window_partition(const Tensor& x, std::size_t window) {
  require_map("window_partition", x);
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (window == 0 || h % window != 0 || w % window != 0)
    throw ShapeError("window_partition: extents " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by window " + std::to_string(window));
  Tensor t = reshape(x, {h / window, window, w / window, window, c});
  t = permute(t, {0, 2, 1, 3, 4});
  return reshape(t, {(h / window) * (w / window), window * window, c});
}

Tensor window_reverse(const Tensor& windows, std::size_t window, std::size_t height,
                      std::size_t width) {
  if (!windows.defined() || windows.rank() != 3)
    throw ShapeError("window_reverse: input must be (nW, M^2, C)");
  if (window == 0 || height % window != 0 || width % window != 0)
    throw ShapeError("window_reverse: extents not divisible by window");
  const std::size_t gh = height / window, gw = width / window;
  if (windows.dim(0) != gh * gw)
    throw ShapeError("window_reverse: window count " + std::to_string(windows.dim(0)) +
                     " does not match " + std::to_string(gh * gw) + " for a " +
                     std::to_string(height) + "x" + std::to_string(width) + " map");
  if (windows.dim(1) != window * window)
    throw ShapeError("window_reverse: tokens per window is " + std::to_string(windows.dim(1)) +
                     ", expected " + std::to_string(window * window));
  const std::size_t c = windows.dim(2);
  Tensor t = reshape(windows, {gh, gw, window, window, c});
  t = permute(t, {0, 2, 1, 3, 4});
  return reshape(t, {height, width, c});
}

Tensor build_shift_mask(std::size_t height, std::size_t width, std::size_t window,
                        std::size_t shift) {
  if (window == 0 || height % window != 0 || width % window != 0)
    throw ShapeError("build_shift_mask: extents not divisible by window");
  if (shift == 0 || shift >= window)
    throw ShapeError("build_shift_mask: shift " + std::to_string(shift) + " must lie in (0, " +
                     std::to_string(window) + ")");
  // Region labels of the rolled map: three bands per axis.
  auto band = [window, shift](std::size_t i, std::size_t extent) -> std::size_t {
    if (i < extent - window) return 0;
    if (i < extent - shift) return 1;
    return 2;
  };
  const std::size_t gh = height / window, gw = width / window;
  const std::size_t t = window * window;
  std::vector<double> mask(gh * gw * t * t, 0.0);
  std::vector<std::size_t> label(t);
  for (std::size_t wy = 0; wy < gh; ++wy) {
    for (std::size_t wx = 0; wx < gw; ++wx) {
      for (std::size_t k = 0; k < t; ++k) {
        const std::size_t y = wy * window + k / window;
        const std::size_t x = wx * window + k % window;
        label[k] = band(y, height) * 3 + band(x, width);
      }
      double* m = mask.data() + (wy * gw + wx) * t * t;
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < t; ++j) m[i * t + j] = label[i] == label[j] ? 0.0 : kMaskNeg;
    }
  }
  return Tensor({gh * gw, t, t}, std::move(mask));
}

Tensor multi_head_attention(const Tensor& tokens, const Tensor& qkv_w, const Tensor& qkv_b,
                            const Tensor& proj_w, const Tensor& proj_b, std::size_t heads,
                            const Tensor& bias, const Tensor& mask) {
  if (!tokens.defined() || tokens.rank() != 3)
    throw ShapeError("attention: tokens must be (B, T, C)");
  const std::size_t b = tokens.dim(0), t = tokens.dim(1), c = tokens.dim(2);
  if (heads == 0 || c % heads != 0)
    throw ShapeError("attention: dim " + std::to_string(c) + " not divisible by " +
                     std::to_string(heads) + " heads");
  const std::size_t hd = c / heads;
  if (mask.defined() && (mask.rank() != 3 || mask.dim(0) != b))
    throw ShapeError("attention: mask has " +
                     std::to_string(mask.rank() == 3 ? mask.dim(0) : 0) +
                     " windows, expected " + std::to_string(b));

  Tensor qkv = linear(reshape(tokens, {b * t, c}), qkv_w, qkv_b);
  qkv = permute(reshape(qkv, {b, t, 3, heads, hd}), {2, 0, 3, 1, 4});
  qkv = reshape(qkv, {3, b * heads, t, hd});
  Tensor q = scale(reshape(slice(qkv, 0, 0, 1), {b * heads, t, hd}),
                   1.0 / std::sqrt(static_cast<double>(hd)));
  Tensor k = reshape(slice(qkv, 0, 1, 1), {b * heads, t, hd});
  Tensor v = reshape(slice(qkv, 0, 2, 1), {b * heads, t, hd});

  Tensor scores = reshape(matmul(q, permute(k, {0, 2, 1})), {b, heads, t, t});
  if (bias.defined()) scores = add(scores, bias);
  if (mask.defined()) scores = masked_add(scores, mask);
  Tensor attn = reshape(softmax(scores, 3), {b * heads, t, t});

  Tensor out = reshape(matmul(attn, v), {b, heads, t, hd});
  out = reshape(permute(out, {0, 2, 1, 3}), {b * t, c});
  out = linear(out, proj_w, proj_b);
  return reshape(out, {b, t, c});
}

Tensor window_attention(const Tensor& x, const WindowAttnParams& p, const Tensor& mask) {
  require_map("window_attention", x);
  const std::size_t h = x.dim(0), w = x.dim(1);
  if (x.dim(2) != p.dim)
    throw ShapeError("window_attention: channel dimension is " + std::to_string(x.dim(2)) +
                     ", expected " + std::to_string(p.dim));
  const std::size_t t = p.window * p.window;
  Tensor bias = gather_rows(p.bias_table, p.rel_index);  // (T*T, heads)
  bias = reshape(permute(bias, {1, 0}), {p.heads, t, t});
  Tensor windows = window_partition(x, p.window);
  if (mask.defined() && (mask.rank() != 3 || mask.dim(0) != windows.dim(0) || mask.dim(1) != t))
    throw ShapeError("window_attention: mask shape " + to_string(mask.shape()) +
                     " does not match " + std::to_string(windows.dim(0)) + " windows of " +
                     std::to_string(t) + " tokens");
  Tensor out =
      multi_head_attention(windows, p.qkv_w, p.qkv_b, p.proj_w, p.proj_b, p.heads, bias, mask);
  return window_reverse(out, p.window, h, w);
}

Tensor shifted_window_attention(const Tensor& x, const WindowAttnParams& p, std::size_t shift) {
  require_map("shifted_window_attention", x);
  const long s = static_cast<long>(shift);
  Tensor mask = build_shift_mask(x.dim(0), x.dim(1), p.window, shift);
  Tensor rolled = roll2d(x, -s, -s);
  return roll2d(window_attention(rolled, p, mask), s, s);
}

Tensor swin_block(const Tensor& x, const SwinBlockParams& p, bool shifted) {
  require_map("swin_block", x);
  Tensor normed = apply_layernorm(x, p.norm1);
  Tensor attn = (shifted && p.shift > 0) ? shifted_window_attention(normed, p.attn, p.shift)
                                         : window_attention(normed, p.attn);
  Tensor z = add(x, attn);
  return add(z, apply_mlp(apply_layernorm(z, p.norm2), p.mlp));
}

Tensor transformer_block(const Tensor& tokens, const TransformerBlockParams& p) {
  if (!tokens.defined() || tokens.rank() != 2 || tokens.dim(1) != p.dim)
    throw ShapeError("transformer_block: tokens must be (N, " + std::to_string(p.dim) + ")");
  ++g_transformer_block_calls;
  const std::size_t n = tokens.dim(0);
  Tensor normed = reshape(apply_layernorm(tokens, p.norm1), {1, n, p.dim});
  Tensor attn = multi_head_attention(normed, p.qkv_w, p.qkv_b, p.proj_w, p.proj_b, p.heads, {},
                                     {});
  Tensor z = add(tokens, reshape(attn, {n, p.dim}));
  return add(z, apply_mlp(apply_layernorm(z, p.norm2), p.mlp));
}

std::size_t transformer_block_calls() { return g_transformer_block_calls; }
void reset_transformer_block_calls() { g_transformer_block_calls = 0; }

}  // namespace dstu
