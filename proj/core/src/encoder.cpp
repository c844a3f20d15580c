#include "dstu/encoder.hpp"

#include "dstu/ops.hpp"

namespace dstu {

PatchEmbedParams make_patch_embed(ParamStore& store, const std::string& prefix,
                                  std::size_t in_channels, std::size_t patch_size,
                                  std::size_t dim) {
  PatchEmbedParams p;
  p.patch_size = patch_size;
  p.weight = store.weight(prefix + ".proj.weight", {patch_size, patch_size, in_channels, dim});
  p.bias = store.zeros(prefix + ".proj.bias", {dim});
  return p;
}

BranchParams make_branch(ParamStore& store, const std::string& prefix,
                         const BranchConfig& config, std::size_t in_channels) {
  BranchParams b;
  b.config = config;
  b.embed = make_patch_embed(store, prefix + ".patch_embed", in_channels, config.patch_size,
                             config.base_dim);
  for (std::size_t i = 0; i < 4; ++i) {
    const StageConfig& sc = config.stages[i];
    const std::string sp = prefix + ".stage" + std::to_string(i + 1);
    auto& stage = b.stages[i];
    for (std::size_t k = 0; k < sc.depth; ++k) {
      stage.blocks.push_back(make_swin_block(store, sp + ".block" + std::to_string(k), sc.dim,
                                             sc.heads, sc.window, sc.shift));
    }
    stage.out_norm = make_layernorm(store, sp + ".norm", sc.dim);
    if (i < 3) stage.merge_w = store.weight(sp + ".merge.reduction.weight", {4 * sc.dim, 2 * sc.dim});
  }
  return b;
}

Tensor patch_embed(const Tensor& image, const PatchEmbedParams& p) {
  if (!image.defined() || image.rank() != 3)
    throw ShapeError("patch_embed: image must be (H, W, C)");
  const std::size_t s = p.patch_size;
  if (image.dim(0) % s != 0 || image.dim(1) % s != 0)
    throw ShapeError("patch_embed: image " + std::to_string(image.dim(0)) + "x" +
                     std::to_string(image.dim(1)) + " not divisible by patch size " +
                     std::to_string(s));
  return conv2d(image, p.weight, p.bias, s, 0);
}

Tensor patch_merge(const Tensor& x, const Tensor& weight) {
  if (!x.defined() || x.rank() != 3) throw ShapeError("patch_merge: input must be (h, w, c)");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (h % 2 != 0 || w % 2 != 0)
    throw ShapeError("patch_merge: extents " + std::to_string(h) + "x" + std::to_string(w) +
                     " must be even");
  // Neighbor order (0,0), (1,0), (0,1), (1,1) as (row, col) offsets.
  Tensor t = reshape(x, {h / 2, 2, w / 2, 2, c});
  t = reshape(permute(t, {0, 2, 3, 1, 4}), {h / 2, w / 2, 4 * c});
  return matmul(t, weight);
}

FeaturePyramid encode_branch(const Tensor& image, const BranchParams& branch) {
  FeaturePyramid out;
  Tensor x = patch_embed(image, branch.embed);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& stage = branch.stages[i];
    for (std::size_t k = 0; k < stage.blocks.size(); ++k) x = swin_block(x, stage.blocks[k], k % 2 == 1);
    out.stages[i] = apply_layernorm(x, stage.out_norm);
    if (i < 3) x = patch_merge(x, stage.merge_w);
  }
  return out;
}

DualFeatures dual_encode(const Tensor& image, const BranchParams& primary,
                         const BranchParams* complementary) {
  DualFeatures f;
  f.primary = encode_branch(image, primary);
  if (complementary) f.complementary = encode_branch(image, *complementary);
  return f;
}

}  // namespace dstu
