#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dstu/params.hpp"
#include "dstu/tensor.hpp"

namespace dstu {

/// Additive value separating tokens that must not attend to each other.
inline constexpr double kMaskNeg = -100.0;

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
};

struct MlpParams {
  Tensor fc1_w, fc1_b;  // (C, 4C), (4C)
  Tensor fc2_w, fc2_b;  // (4C, C), (C)
};

/// Windowed multi-head attention with a learned relative position bias.
struct WindowAttnParams {
  std::size_t dim = 0;
  std::size_t heads = 0;
  std::size_t window = 0;
  Tensor qkv_w, qkv_b;    // (C, 3C), (3C)
  Tensor proj_w, proj_b;  // (C, C), (C)
  Tensor bias_table;      // ((2M-1)^2, heads)
  std::vector<std::size_t> rel_index;  // M^2 * M^2 entries
};

struct SwinBlockParams {
  std::size_t shift = 0;  // 0 disables SW-MSA for this block
  LayerNormParams norm1;
  WindowAttnParams attn;
  LayerNormParams norm2;
  MlpParams mlp;
};

/// Pre-norm global attention block without positional bias.
struct TransformerBlockParams {
  std::size_t dim = 0;
  std::size_t heads = 0;
  LayerNormParams norm1;
  Tensor qkv_w, qkv_b;
  Tensor proj_w, proj_b;
  LayerNormParams norm2;
  MlpParams mlp;
};

LayerNormParams make_layernorm(ParamStore& store, const std::string& prefix, std::size_t dim);
MlpParams make_mlp(ParamStore& store, const std::string& prefix, std::size_t dim,
                   std::size_t hidden);
WindowAttnParams make_window_attn(ParamStore& store, const std::string& prefix, std::size_t dim,
                                  std::size_t heads, std::size_t window);
/// `shift` is the cyclic displacement used when the block runs shifted;
/// pass 0 for a block that always uses the regular partition.
SwinBlockParams make_swin_block(ParamStore& store, const std::string& prefix, std::size_t dim,
                                std::size_t heads, std::size_t window, std::size_t shift);
TransformerBlockParams make_transformer_block(ParamStore& store, const std::string& prefix,
                                              std::size_t dim, std::size_t heads);

Tensor apply_layernorm(const Tensor& x, const LayerNormParams& p);
Tensor apply_mlp(const Tensor& x, const MlpParams& p);

/// Flattened (M^2 x M^2) table mapping a query/key pair inside a window to
/// its row of the bias table. Entries lie in [0, (2M-1)^2).
std::vector<std::size_t> relative_position_index(std::size_t window);

/// (H, W, C) -> (nW, M^2, C); windows row-major over the window grid, tokens
/// row-major inside a window.
Tensor window_partition(const Tensor& x, std::size_t window);
/// Inverse of window_partition.
Tensor window_reverse(const Tensor& windows, std::size_t window, std::size_t height,
                      std::size_t width);

/// Mask (nW, M^2, M^2) for a map rolled by (-shift, -shift): kMaskNeg between
/// tokens that came from different pre-shift regions, 0 otherwise.
Tensor build_shift_mask(std::size_t height, std::size_t width, std::size_t window,
                        std::size_t shift);

/// Multi-head attention over token groups. tokens: (B, T, C). `bias` is
/// (heads, T, T) or undefined; `mask` is (B, T, T) or undefined.
Tensor multi_head_attention(const Tensor& tokens, const Tensor& qkv_w, const Tensor& qkv_b,
                            const Tensor& proj_w, const Tensor& proj_b, std::size_t heads,
                            const Tensor& bias, const Tensor& mask);

/// Attention core of W-MSA / SW-MSA on an (H, W, C) map.
Tensor window_attention(const Tensor& x, const WindowAttnParams& p, const Tensor& mask = {});
/// roll(-s) -> masked window attention -> roll(+s).
Tensor shifted_window_attention(const Tensor& x, const WindowAttnParams& p, std::size_t shift);

/// z' = MLP(LN(z^)) + z^ with z^ = (S)W-MSA(LN(z)) + z. Runs shifted only when
/// `shifted` is set and the block has a nonzero shift.
Tensor swin_block(const Tensor& x, const SwinBlockParams& p, bool shifted);

/// (N, C) -> (N, C).
Tensor transformer_block(const Tensor& tokens, const TransformerBlockParams& p);

/// Number of transformer_block calls on this thread since the last reset.
std::size_t transformer_block_calls();
void reset_transformer_block_calls();

}  // namespace dstu
