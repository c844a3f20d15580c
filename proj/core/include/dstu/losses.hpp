#pragma once

#include <string>
#include <vector>

#include "dstu/config.hpp"
#include "dstu/model.hpp"
#include "dstu/tensor.hpp"

namespace dstu {

struct WeightMapOptions {
  double lambda = 5.0;
  std::size_t kernel = 15;  // odd; clamped to the image
};

/// w = 1 + lambda * |boxmean(G) - G|, with the box mean taken over the
/// in-image part of each k x k neighborhood. `mask` is (H, W) or (H, W, 1)
/// with values in {0, 1}; the result has the same shape.
Tensor pixel_weight_map(const Tensor& mask, const WeightMapOptions& opts = {});

/// sum(w * bce(logits, G)) / sum(w), evaluated in the log-sum-exp form.
Tensor weighted_bce(const Tensor& logits, const Tensor& mask, const Tensor& weights);
/// 1 - sum(w p G) / sum(w (p + G - p G)) with p = sigmoid(logits); an empty
/// union yields 0.
Tensor weighted_iou(const Tensor& logits, const Tensor& mask, const Tensor& weights);
/// weighted_iou + weighted_bce with the weight map of `mask`.
Tensor structure_loss(const Tensor& logits, const Tensor& mask, const Tensor& weights);

/// alpha L(G, S1) + beta L(G, S2) + gamma L(G, S3).
Tensor total_loss(const Prediction& pred, const Tensor& mask, const LossWeights& weights);

struct MetricReport {
  double mdice = 0.0;
  double miou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct PixelCounts {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
};

PixelCounts count_pixels(const std::vector<unsigned char>& pred,
                         const std::vector<unsigned char>& truth);
MetricReport metrics_from_counts(const PixelCounts& counts);
/// Both inputs binary and of equal size.
MetricReport seg_metrics(const std::vector<unsigned char>& pred,
                         const std::vector<unsigned char>& truth);
/// sigmoid(logits) > 0.5.
std::vector<unsigned char> binarize_logits(const Tensor& logits);
std::vector<unsigned char> binarize_mask(const Tensor& mask);
/// Per-image mean of each metric.
MetricReport mean_report(const std::vector<MetricReport>& reports);

}  // namespace dstu
