#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "dstu/attention.hpp"
#include "dstu/config.hpp"

namespace dstu {

/// Per-stage token maps of one encoder branch; stage i has shape
/// (H / (s*2^i), W / (s*2^i), C*2^i) for i = 0..3.
struct FeaturePyramid {
  std::array<Tensor, 4> stages;
};

struct PatchEmbedParams {
  std::size_t patch_size = 4;
  Tensor weight;  // (s, s, in, C)
  Tensor bias;    // (C)
};

struct EncoderStageParams {
  std::vector<SwinBlockParams> blocks;
  LayerNormParams out_norm;
  Tensor merge_w;  // (4c, 2c); undefined after the last stage
};

struct BranchParams {
  BranchConfig config;
  PatchEmbedParams embed;
  std::array<EncoderStageParams, 4> stages;
};

PatchEmbedParams make_patch_embed(ParamStore& store, const std::string& prefix,
                                  std::size_t in_channels, std::size_t patch_size,
                                  std::size_t dim);
BranchParams make_branch(ParamStore& store, const std::string& prefix,
                         const BranchConfig& config, std::size_t in_channels);

/// (H, W, in) -> (H/s, W/s, C) by an s x s stride-s convolution.
Tensor patch_embed(const Tensor& image, const PatchEmbedParams& p);
/// (h, w, c) -> (h/2, w/2, 2c): 2x2 neighborhood concat then projection.
Tensor patch_merge(const Tensor& x, const Tensor& weight);

/// Four Swin stages with patch merging after stages 1-3; each stage output is
/// layer-normed before it is exposed.
FeaturePyramid encode_branch(const Tensor& image, const BranchParams& branch);

struct DualFeatures {
  FeaturePyramid primary;
  std::optional<FeaturePyramid> complementary;
};

/// Runs the primary branch and, when present, the complementary branch.
DualFeatures dual_encode(const Tensor& image, const BranchParams& primary,
                         const BranchParams* complementary);

}  // namespace dstu
