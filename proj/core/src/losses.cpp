#include "dstu/losses.hpp"

#include <algorithm>
#include <cmath>

#include "dstu/ops.hpp"

namespace dstu {

namespace {

void require_binary(const Tensor& mask, const char* op) {
  for (double v : mask.data()) {
    if (v != 0.0 && v != 1.0)
      throw std::invalid_argument(std::string(op) + ": mask must be binary, found " +
                                  std::to_string(v));
  }
}

void require_same(const char* op, const Tensor& a, const Tensor& b, const char* name) {
  if (!a.defined() || !b.defined() || a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": " + name + " shape " +
                     (b.defined() ? to_string(b.shape()) : std::string("undefined")) +
                     " differs from logits shape " +
                     (a.defined() ? to_string(a.shape()) : std::string("undefined")));
}

double stable_sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

Tensor pixel_weight_map(const Tensor& mask, const WeightMapOptions& opts) {
  if (!mask.defined() || mask.rank() < 2 || (mask.rank() == 3 && mask.dim(2) != 1) ||
      mask.rank() > 3)
    throw ShapeError("pixel_weight_map: mask must be (H, W) or (H, W, 1)");
  require_binary(mask, "pixel_weight_map");
  const std::size_t h = mask.dim(0), w = mask.dim(1);
  std::size_t k = std::min({opts.kernel, h, w});
  if (k % 2 == 0) --k;
  const long r = static_cast<long>(k / 2);

  // Summed-area table with a zero border row/column.
  std::vector<double> sat((h + 1) * (w + 1), 0.0);
  const auto m = mask.data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      sat[(y + 1) * (w + 1) + x + 1] = m[y * w + x] + sat[y * (w + 1) + x + 1] +
                                       sat[(y + 1) * (w + 1) + x] - sat[y * (w + 1) + x];
  std::vector<double> out(h * w);
  const long lh = static_cast<long>(h), lw = static_cast<long>(w);
  for (long y = 0; y < lh; ++y) {
    const long y0 = std::max(0L, y - r), y1 = std::min(lh, y + r + 1);
    for (long x = 0; x < lw; ++x) {
      const long x0 = std::max(0L, x - r), x1 = std::min(lw, x + r + 1);
      const double total = sat[y1 * (lw + 1) + x1] - sat[y0 * (lw + 1) + x1] -
                           sat[y1 * (lw + 1) + x0] + sat[y0 * (lw + 1) + x0];
      const double box = total / static_cast<double>((y1 - y0) * (x1 - x0));
      out[y * lw + x] = 1.0 + opts.lambda * std::abs(box - m[y * lw + x]);
    }
  }
  return Tensor(mask.shape(), std::move(out));
}

Tensor weighted_bce(const Tensor& logits, const Tensor& mask, const Tensor& weights) {
  require_same("weighted_bce", logits, mask, "mask");
  require_same("weighted_bce", logits, weights, "weights");
  const auto x = logits.data();
  const auto g = mask.data();
  const auto w = weights.data();
  double wsum = 0.0, total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double bce = std::max(x[i], 0.0) - x[i] * g[i] + std::log1p(std::exp(-std::abs(x[i])));
    total += w[i] * bce;
    wsum += w[i];
  }
  if (!(wsum > 0.0)) throw NumericError("weighted_bce: weights sum to zero");
  auto li = logits.impl(), gi = mask.impl(), wi = weights.impl();
  return make_result("weighted_bce", Shape{1}, {total / wsum}, {logits, mask, weights},
                     [li, gi, wi, wsum](const TensorImpl& o) {
                       if (!li->requires_grad) return;
                       auto& grad = li->grad_buffer();
                       const double scale = o.grad[0] / wsum;
                       for (std::size_t i = 0; i < grad.size(); ++i)
                         grad[i] += scale * wi->data[i] *
                                    (stable_sigmoid(li->data[i]) - gi->data[i]);
                     });
}

Tensor weighted_iou(const Tensor& logits, const Tensor& mask, const Tensor& weights) {
  require_same("weighted_iou", logits, mask, "mask");
  require_same("weighted_iou", logits, weights, "weights");
  const auto x = logits.data();
  const auto g = mask.data();
  const auto w = weights.data();
  double inter = 0.0, uni = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double p = stable_sigmoid(x[i]);
    inter += w[i] * p * g[i];
    uni += w[i] * (p + g[i] - p * g[i]);
  }
  constexpr double kEmptyUnion = 1e-12;
  const bool empty = uni <= kEmptyUnion;
  const double value = empty ? 0.0 : 1.0 - inter / uni;
  auto li = logits.impl(), gi = mask.impl(), wi = weights.impl();
  return make_result("weighted_iou", Shape{1}, {value}, {logits, mask, weights},
                     [li, gi, wi, inter, uni, empty](const TensorImpl& o) {
                       if (!li->requires_grad || empty) return;
                       auto& grad = li->grad_buffer();
                       const double u2 = uni * uni;
                       for (std::size_t i = 0; i < grad.size(); ++i) {
                         const double p = stable_sigmoid(li->data[i]);
                         const double gv = gi->data[i], wv = wi->data[i];
                         const double d_inter = wv * gv;
                         const double d_union = wv * (1.0 - gv);
                         const double d_loss = -(d_inter * uni - inter * d_union) / u2;
                         grad[i] += o.grad[0] * d_loss * p * (1.0 - p);
                       }
                     });
}

Tensor structure_loss(const Tensor& logits, const Tensor& mask, const Tensor& weights) {
  return add(weighted_iou(logits, mask, weights), weighted_bce(logits, mask, weights));
}

Tensor total_loss(const Prediction& pred, const Tensor& mask, const LossWeights& weights) {
  const Tensor w = pixel_weight_map(mask);
  Tensor total = scale(structure_loss(pred.s1, mask, w), weights.alpha);
  total = add(total, scale(structure_loss(pred.s2, mask, w), weights.beta));
  return add(total, scale(structure_loss(pred.s3, mask, w), weights.gamma));
}

PixelCounts count_pixels(const std::vector<unsigned char>& pred,
                         const std::vector<unsigned char>& truth) {
  if (pred.size() != truth.size())
    throw ShapeError("seg_metrics: prediction has " + std::to_string(pred.size()) +
                     " pixels, ground truth has " + std::to_string(truth.size()));
  PixelCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] > 1 || truth[i] > 1) throw std::invalid_argument("seg_metrics: masks must be binary");
    if (pred[i] && truth[i]) ++c.tp;
    else if (pred[i]) ++c.fp;
    else if (truth[i]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

MetricReport metrics_from_counts(const PixelCounts& c) {
  const auto tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp),
             fn = static_cast<double>(c.fn);
  const bool pred_empty = c.tp + c.fp == 0;
  const bool truth_empty = c.tp + c.fn == 0;
  MetricReport r;
  if (c.tp + c.fp + c.fn == 0) {
    r.mdice = r.miou = 1.0;
  } else {
    r.mdice = 2.0 * tp / (2.0 * tp + fp + fn);
    r.miou = tp / (tp + fp + fn);
  }
  r.precision = pred_empty ? (truth_empty ? 1.0 : 0.0) : tp / (tp + fp);
  r.recall = truth_empty ? (pred_empty ? 1.0 : 0.0) : tp / (tp + fn);
  return r;
}

MetricReport seg_metrics(const std::vector<unsigned char>& pred,
                         const std::vector<unsigned char>& truth) {
  return metrics_from_counts(count_pixels(pred, truth));
}

std::vector<unsigned char> binarize_logits(const Tensor& logits) {
  std::vector<unsigned char> out(logits.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = stable_sigmoid(logits.data()[i]) > 0.5 ? 1 : 0;
  return out;
}

std::vector<unsigned char> binarize_mask(const Tensor& mask) {
  std::vector<unsigned char> out(mask.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask.data()[i] > 0.5 ? 1 : 0;
  return out;
}

MetricReport mean_report(const std::vector<MetricReport>& reports) {
  MetricReport m;
  if (reports.empty()) return m;
  for (const auto& r : reports) {
    m.mdice += r.mdice;
    m.miou += r.miou;
    m.precision += r.precision;
    m.recall += r.recall;
  }
  const double n = static_cast<double>(reports.size());
  m.mdice /= n;
  m.miou /= n;
  m.precision /= n;
  m.recall /= n;
  return m;
}

}  // namespace dstu
