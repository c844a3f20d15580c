#include "dstu/model.hpp"

#include <algorithm>

#include "dstu/ops.hpp"

namespace dstu {

std::size_t group_count(std::size_t channels) {
  std::size_t g = std::min<std::size_t>(8, channels);
  while (channels % g != 0) --g;
  return g;
}

ConvBlockParams make_conv_block(ParamStore& store, const std::string& prefix,
                                std::size_t in_channels, std::size_t out_channels,
                                std::size_t stride) {
  ConvBlockParams p;
  p.stride = stride;
  p.conv_w = store.weight(prefix + ".conv.weight", {3, 3, in_channels, out_channels});
  p.conv_b = store.zeros(prefix + ".conv.bias", {out_channels});
  p.gn_gamma = store.ones(prefix + ".gn.weight", {out_channels});
  p.gn_beta = store.zeros(prefix + ".gn.bias", {out_channels});
  return p;
}

Tensor conv_block(const Tensor& x, const ConvBlockParams& p) {
  Tensor y = conv2d(x, p.conv_w, p.conv_b, p.stride, 1);
  y = groupnorm(y, group_count(y.dim(2)), p.gn_gamma, p.gn_beta, 1e-5);
  return relu(y);
}

namespace {

HeadParams make_head(ParamStore& store, const std::string& prefix, std::size_t in_channels) {
  return {store.weight(prefix + ".weight", {1, 1, in_channels, 1}),
          store.zeros(prefix + ".bias", {1})};
}

Tensor apply_head(const Tensor& x, const HeadParams& p, std::size_t height) {
  Tensor y = conv2d(x, p.w, p.b, 1, 0);
  const std::size_t factor = height / x.dim(0);
  return factor == 1 ? y : upsample_nearest(y, factor);
}

}  // namespace

Tensor decoder_stage(const Tensor& x, const Tensor& skip, const DecoderStageParams& p) {
  if (!x.defined() || x.rank() != 3) throw ShapeError("decoder_stage: input must be (h, w, c)");
  Tensor y = upsample_nearest(x, 2);
  if (p.has_skip) {
    if (!skip.defined() || skip.rank() != 3)
      throw ShapeError("decoder_stage: skip must be (h, w, c)");
    if (skip.dim(0) != y.dim(0) || skip.dim(1) != y.dim(1))
      throw ShapeError("decoder_stage: skip map " + std::to_string(skip.dim(0)) + "x" +
                       std::to_string(skip.dim(1)) + " is not twice the input map " +
                       std::to_string(x.dim(0)) + "x" + std::to_string(x.dim(1)));
    y = concat({y, skip}, 2);
  }
  if (!p.swin) return conv_block(y, p.conv);
  y = linear(y, p.proj_w, p.proj_b);
  for (std::size_t k = 0; k < p.blocks.size(); ++k) y = swin_block(y, p.blocks[k], k % 2 == 1);
  return y;
}

std::pair<Tensor, Tensor> low_level_features(const Tensor& image, const ConvBlockParams& full,
                                             const ConvBlockParams& half) {
  Tensor f = conv_block(image, full);
  Tensor h = conv_block(f, half);
  return {f, h};
}

Model::Model(ModelConfig config) : config_(std::move(config)), store_(config_.seed) {
  config_.validate();
  const ModelConfig& c = config_;
  const BranchConfig pb = c.primary();
  primary_ = make_branch(store_, "encoder.primary", pb, c.in_channels);
  const bool dual = is_dual(c.mode);
  if (dual) complementary_ = make_branch(store_, "encoder.complementary", c.complementary(),
                                         c.in_channels);
  if (dual) {
    const BranchConfig cb = c.complementary();
    for (std::size_t i = 0; i < 4; ++i) {
      fusion_[i] = make_fusion_stage(
          store_, "fusion.stage" + std::to_string(i + 1), pb.stages[i].dim, pb.stages[i].heads,
          cb.stages[i].dim, cb.stages[i].heads, pb.stages[i].dim,
          c.mode == Mode::DualSwin, c.tif_merge);
    }
  }

  const auto dcfg = c.decoder();
  std::size_t in_dim = pb.stages[3].dim;
  for (std::size_t j = 0; j < 3; ++j) {
    const std::string prefix = "decoder.stage" + std::to_string(j + 1);
    const std::size_t skip_dim = pb.stages[2 - j].dim;
    auto& d = decoder_[j];
    const auto& sc = dcfg[j];
    if (c.mode == Mode::Base) {
      d.swin = false;
      d.has_skip = false;
      d.conv = make_conv_block(store_, prefix + ".block", in_dim, sc.dim, 1);
    } else if (c.mode == Mode::SwinUNet) {
      d.swin = false;
      d.conv = make_conv_block(store_, prefix + ".block", in_dim + skip_dim, sc.dim, 1);
    } else {
      d.proj_w = store_.weight(prefix + ".proj.weight", {in_dim + skip_dim, sc.dim});
      d.proj_b = store_.zeros(prefix + ".proj.bias", {sc.dim});
      for (std::size_t k = 0; k < sc.depth; ++k)
        d.blocks.push_back(make_swin_block(store_, prefix + ".block" + std::to_string(k), sc.dim,
                                           sc.heads, sc.window, sc.shift));
    }
    in_dim = sc.dim;
  }

  const std::size_t low = c.low_level_dim;
  low_full_ = make_conv_block(store_, "low_level.full", c.in_channels, low, 1);
  low_half_ = make_conv_block(store_, "low_level.half", low, low, 2);
  refine_half_ = make_conv_block(store_, "head.refine_half", in_dim + low, low, 1);
  refine_full_ = make_conv_block(store_, "head.refine_full", low + low, low, 1);
  head_s1_ = make_head(store_, "head.s1", low);
  head_s2_ = make_head(store_, "head.s2", pb.stages[3].dim);
  head_s3_ = make_head(store_, "head.s3", dcfg[0].dim);
}

Prediction Model::forward(const Tensor& image, ForwardTrace* trace) const {
  if (!image.defined() || image.rank() != 3 || image.dim(2) != config_.in_channels)
    throw ShapeError("model: image must be (H, W, " + std::to_string(config_.in_channels) + ")");
  config_.validate_resolution(image.dim(0), image.dim(1));
  const std::size_t height = image.dim(0);

  DualFeatures feats =
      dual_encode(image, primary_, complementary_ ? &*complementary_ : nullptr);
  std::array<Tensor, 4> skips;
  for (std::size_t i = 0; i < 4; ++i) {
    if (feats.complementary) {
      const std::size_t before = transformer_block_calls();
      skips[i] = fuse_stage(feats.primary.stages[i], feats.complementary->stages[i], fusion_[i]);
      if (trace) trace->transformer_blocks[i] = transformer_block_calls() - before;
    } else {
      skips[i] = feats.primary.stages[i];
    }
    if (trace) {
      trace->primary_stages[i] = feats.primary.stages[i].shape();
      if (feats.complementary) trace->complementary_stages[i] = feats.complementary->stages[i].shape();
      trace->fused[i] = skips[i].shape();
    }
  }

  Tensor x = skips[3];
  Tensor first_decoder;
  for (std::size_t j = 0; j < 3; ++j) {
    const auto& d = decoder_[j];
    Tensor skip;
    if (d.has_skip) {
      skip = skips[2 - j];
      if (trace) ++trace->skip_uses[2 - j];
    }
    x = decoder_stage(x, skip, d);
    if (j == 0) first_decoder = x;
    if (trace) trace->decoder_outputs[j] = x.shape();
  }

  auto [low_full, low_half] = low_level_features(image, low_full_, low_half_);
  if (trace) {
    trace->low_full = low_full.shape();
    trace->low_half = low_half.shape();
  }
  Tensor y = conv_block(concat({upsample_nearest(x, 2), low_half}, 2), refine_half_);
  y = conv_block(concat({upsample_nearest(y, 2), low_full}, 2), refine_full_);

  Prediction pred;
  pred.s1 = apply_head(y, head_s1_, height);
  const Tensor& s2_src =
      config_.s2_source == S2Source::Fused ? skips[3] : feats.primary.stages[3];
  pred.s2 = apply_head(s2_src, head_s2_, height);
  pred.s3 = apply_head(first_decoder, head_s3_, height);
  return pred;
}

}  // namespace dstu
