#pragma once

#include <array>
#include <optional>
#include <vector>

#include "dstu/config.hpp"
#include "dstu/encoder.hpp"
#include "dstu/fusion.hpp"

namespace dstu {

/// Deep-supervision outputs, each (H, W, 1) logits at the input resolution.
struct Prediction {
  Tensor s1;  // main head
  Tensor s2;  // encoder stage 4
  Tensor s3;  // decoder stage 1
};

/// conv3x3 -> GroupNorm(min(8, C)) -> ReLU
struct ConvBlockParams {
  std::size_t stride = 1;
  Tensor conv_w, conv_b;
  Tensor gn_gamma, gn_beta;
};

struct DecoderStageParams {
  bool swin = true;
  bool has_skip = true;
  Tensor proj_w, proj_b;  // (in + skip, dim) when swin
  std::vector<SwinBlockParams> blocks;
  ConvBlockParams conv;   // when !swin
};

struct HeadParams {
  Tensor w, b;  // 1x1 conv as (1, 1, C, 1), (1)
};

ConvBlockParams make_conv_block(ParamStore& store, const std::string& prefix,
                                std::size_t in_channels, std::size_t out_channels,
                                std::size_t stride);
Tensor conv_block(const Tensor& x, const ConvBlockParams& p);
std::size_t group_count(std::size_t channels);

/// Upsample x2, concat the skip (when present), project and run the Swin
/// blocks, or a conv block for the conv decoder. Output at the skip's side.
Tensor decoder_stage(const Tensor& x, const Tensor& skip, const DecoderStageParams& p);

/// Full-resolution (H, W) and half-resolution (H/2, W/2) convolutional features.
std::pair<Tensor, Tensor> low_level_features(const Tensor& image, const ConvBlockParams& full,
                                             const ConvBlockParams& half);

/// Instrumentation filled by Model::forward when requested.
struct ForwardTrace {
  std::array<Shape, 4> primary_stages;
  std::array<Shape, 4> complementary_stages;
  std::array<Shape, 4> fused;
  std::array<Shape, 3> decoder_outputs;
  std::array<std::size_t, 4> skip_uses{};  // per fused stage
  std::array<std::size_t, 4> transformer_blocks{};  // per fusion stage
  Shape low_full, low_half;
};

/// The segmentation network in any of its ablation modes.
class Model {
 public:
  explicit Model(ModelConfig config);

  Prediction forward(const Tensor& image, ForwardTrace* trace = nullptr) const;

  const ModelConfig& config() const { return config_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

 private:
  ModelConfig config_;
  ParamStore store_;
  BranchParams primary_;
  std::optional<BranchParams> complementary_;
  std::array<FusionStageParams, 4> fusion_;
  std::array<DecoderStageParams, 3> decoder_;
  ConvBlockParams low_full_, low_half_;
  ConvBlockParams refine_half_, refine_full_;
  HeadParams head_s1_, head_s2_, head_s3_;
};

}  // namespace dstu
