#pragma once

#include <string>

#include "dstu/attention.hpp"

namespace dstu {

/// Per-stage fusion parameters. Projections are undefined when the source
/// and target channel counts match (identity).
struct FusionStageParams {
  bool interactive = true;  // false: plain concat + projection
  bool merge = true;        // false: the primary interaction output is the skip
  Tensor summary_to_primary_w, summary_to_primary_b;              // (c, C), (C)
  Tensor summary_to_complementary_w, summary_to_complementary_b;  // (C, c), (c)
  TransformerBlockParams primary_block;        // over 1 + h*w tokens of dim C
  TransformerBlockParams complementary_block;  // over 1 + h*w/4 tokens of dim c
  Tensor merge_w, merge_b;                     // (C + c, out), (out)
};

FusionStageParams make_fusion_stage(ParamStore& store, const std::string& prefix,
                                    std::size_t primary_dim, std::size_t primary_heads,
                                    std::size_t complementary_dim,
                                    std::size_t complementary_heads, std::size_t out_dim,
                                    bool interactive, bool merge);

/// Global mean over the tokens of `source` (..., c), projected to the target
/// dim: (1, C). An undefined weight means identity.
Tensor summarize(const Tensor& source, const Tensor& proj_w, const Tensor& proj_b);

/// Prepends `summary` (1, C) to the tokens of `features` (h, w, C), runs one
/// transformer block over the 1 + h*w tokens and drops the summary position.
Tensor tif_interact(const Tensor& features, const Tensor& summary,
                    const TransformerBlockParams& block);

/// Fused skip feature at the primary resolution. Requires side(F) = 2 side(G).
Tensor fuse_stage(const Tensor& primary, const Tensor& complementary,
                  const FusionStageParams& p);

}  // namespace dstu
