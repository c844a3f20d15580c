#include "dstu/fusion.hpp"

#include "dstu/ops.hpp"

namespace dstu {

FusionStageParams make_fusion_stage(ParamStore& store, const std::string& prefix,
                                    std::size_t primary_dim, std::size_t primary_heads,
                                    std::size_t complementary_dim,
                                    std::size_t complementary_heads, std::size_t out_dim,
                                    bool interactive, bool merge) {
  FusionStageParams p;
  p.interactive = interactive;
  p.merge = merge || !interactive;
  if (interactive) {
    if (complementary_dim != primary_dim) {
      p.summary_to_primary_w =
          store.weight(prefix + ".summary_to_primary.weight", {complementary_dim, primary_dim});
      p.summary_to_primary_b = store.zeros(prefix + ".summary_to_primary.bias", {primary_dim});
      p.summary_to_complementary_w = store.weight(prefix + ".summary_to_complementary.weight",
                                                  {primary_dim, complementary_dim});
      p.summary_to_complementary_b =
          store.zeros(prefix + ".summary_to_complementary.bias", {complementary_dim});
    }
    p.primary_block =
        make_transformer_block(store, prefix + ".primary_block", primary_dim, primary_heads);
    p.complementary_block = make_transformer_block(store, prefix + ".complementary_block",
                                                   complementary_dim, complementary_heads);
  }
  if (p.merge) {
    p.merge_w = store.weight(prefix + ".merge.weight", {primary_dim + complementary_dim, out_dim});
    p.merge_b = store.zeros(prefix + ".merge.bias", {out_dim});
  }
  return p;
}

Tensor summarize(const Tensor& source, const Tensor& proj_w, const Tensor& proj_b) {
  if (!source.defined() || source.rank() < 2)
    throw ShapeError("summarize: source must have a token axis");
  Tensor g = avgpool_spatial(source);
  return proj_w.defined() ? linear(g, proj_w, proj_b) : g;
}

Tensor tif_interact(const Tensor& features, const Tensor& summary,
                    const TransformerBlockParams& block) {
  if (!features.defined() || features.rank() != 3)
    throw ShapeError("tif_interact: features must be (h, w, C)");
  const std::size_t h = features.dim(0), w = features.dim(1), c = features.dim(2);
  if (!summary.defined() || summary.shape() != Shape{1, c})
    throw ShapeError("tif_interact: summary must be (1, " + std::to_string(c) + "), got " +
                     (summary.defined() ? to_string(summary.shape()) : std::string("undefined")));
  Tensor seq = concat({summary, reshape(features, {h * w, c})}, 0);
  Tensor out = transformer_block(seq, block);
  return reshape(slice(out, 0, 1, h * w), {h, w, c});
}

Tensor fuse_stage(const Tensor& primary, const Tensor& complementary,
                  const FusionStageParams& p) {
  if (!primary.defined() || primary.rank() != 3 || !complementary.defined() ||
      complementary.rank() != 3)
    throw ShapeError("fuse_stage: features must be (h, w, c) maps");
  if (primary.dim(0) != 2 * complementary.dim(0) || primary.dim(1) != 2 * complementary.dim(1))
    throw ShapeError("fuse_stage: primary map " + std::to_string(primary.dim(0)) + "x" +
                     std::to_string(primary.dim(1)) + " is not twice the complementary map " +
                     std::to_string(complementary.dim(0)) + "x" +
                     std::to_string(complementary.dim(1)));
  Tensor f_out = primary;
  Tensor g_out = complementary;
  if (p.interactive) {
    f_out = tif_interact(primary,
                         summarize(complementary, p.summary_to_primary_w, p.summary_to_primary_b),
                         p.primary_block);
    g_out = tif_interact(complementary,
                         summarize(primary, p.summary_to_complementary_w,
                                   p.summary_to_complementary_b),
                         p.complementary_block);
  }
  if (!p.merge) return f_out;
  Tensor joined = concat({f_out, upsample_nearest(g_out, 2)}, 2);
  return linear(joined, p.merge_w, p.merge_b);
}

}  // namespace dstu
