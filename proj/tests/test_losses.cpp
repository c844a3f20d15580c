#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "dstu/losses.hpp"
#include "dstu/ops.hpp"
#include "support.hpp"

using namespace dstu;
using dstu::test::bce_oracle;
using dstu::test::iou_oracle;
using dstu::test::random_tensor;
using dstu::test::sigmoid_ref;
using dstu::test::weight_oracle;

namespace {

Tensor random_mask(std::size_t h, std::size_t w, std::mt19937_64& gen, double p = 0.4) {
  std::bernoulli_distribution d(p);
  std::vector<double> v(h * w);
  for (auto& x : v) x = d(gen) ? 1.0 : 0.0;
  return Tensor({h, w, 1}, std::move(v));
}

std::vector<unsigned char> to_bits(const Tensor& m) {
  std::vector<unsigned char> b(m.size());
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = m[i] > 0.5;
  return b;
}

}  // namespace

TEST(WeightMap, UniformMaskGivesUnitWeights) {
  for (double v : {0.0, 1.0}) {
    Tensor w = pixel_weight_map(Tensor({20, 20, 1}, v));
    for (double x : w.data()) EXPECT_DOUBLE_EQ(x, 1.0);
  }
}

TEST(WeightMap, BoundaryPixelRaisesItsNeighborhood) {
  Tensor g({31, 31, 1}, 0.0);
  g.mutable_data()[15 * 31 + 15] = 1.0;
  Tensor w = pixel_weight_map(g);
  for (long y = 0; y < 31; ++y)
    for (long x = 0; x < 31; ++x) {
      const bool near = std::abs(y - 15) <= 7 && std::abs(x - 15) <= 7;
      if (near) EXPECT_GT(w[y * 31 + x], 1.0);
      else EXPECT_DOUBLE_EQ(w[y * 31 + x], 1.0);
    }
  EXPECT_NEAR(w[15 * 31 + 15], 1.0 + 5.0 * (1.0 - 1.0 / 225.0), 1e-12);
}

TEST(WeightMap, MatchesBoxMeanOracle) {
  std::mt19937_64 gen(1);
  for (std::size_t k : {15u, 5u, 4u, 1u}) {
    Tensor g = random_mask(17, 23, gen);
    WeightMapOptions opts;
    opts.kernel = k;
    const std::size_t eff = k % 2 == 0 ? k - 1 : k;
    EXPECT_LE(dstu::test::max_abs_diff(pixel_weight_map(g, opts).data(), weight_oracle(g, 5.0, eff)),
              1e-12);
  }
  Tensor small = random_mask(6, 9, gen);
  EXPECT_LE(dstu::test::max_abs_diff(pixel_weight_map(small).data(), weight_oracle(small, 5.0, 5)),
            1e-12);
  EXPECT_THROW(pixel_weight_map(Tensor({4, 4, 1}, 0.5)), std::invalid_argument);
}

TEST(WeightMap, ZeroLambdaIsUnweighted) {
  std::mt19937_64 gen(2);
  Tensor g = random_mask(16, 16, gen);
  WeightMapOptions opts;
  opts.lambda = 0.0;
  Tensor w = pixel_weight_map(g, opts);
  for (double v : w.data()) EXPECT_EQ(v, 1.0);
  Tensor z = random_tensor({16, 16, 1}, gen, -3, 3);
  double plain = 0.0;
  for (std::size_t i = 0; i < 256; ++i) {
    const double p = sigmoid_ref(z[i]);
    plain -= g[i] * std::log(p) + (1 - g[i]) * std::log(1 - p);
  }
  EXPECT_NEAR(weighted_bce(z, g, w).item(), plain / 256.0, 1e-12);
}

TEST(WeightedBce, ZeroLogitsGiveLogTwo) {
  std::mt19937_64 gen(3);
  Tensor g = random_mask(8, 8, gen);
  EXPECT_NEAR(weighted_bce(Tensor({8, 8, 1}, 0.0), g, Tensor({8, 8, 1}, 1.0)).item(),
              std::log(2.0), 1e-15);
}

TEST(WeightedBce, ConfidentCorrectLogitsGiveZero) {
  std::mt19937_64 gen(4);
  Tensor g = random_mask(8, 8, gen);
  std::vector<double> z(64);
  for (std::size_t i = 0; i < 64; ++i) z[i] = g[i] > 0.5 ? 800.0 : -800.0;
  EXPECT_LT(weighted_bce(Tensor({8, 8, 1}, z), g, pixel_weight_map(g)).item(), 1e-300);
  for (auto& v : z) v = -v;  // confidently wrong: large but finite
  EXPECT_NEAR(weighted_bce(Tensor({8, 8, 1}, z), g, Tensor({8, 8, 1}, 1.0)).item(), 800.0, 1e-9);
}

TEST(WeightedIou, ExactAndOppositePredictions) {
  std::mt19937_64 gen(5);
  Tensor g = random_mask(8, 8, gen);
  std::vector<double> z(64);
  for (std::size_t i = 0; i < 64; ++i) z[i] = g[i] > 0.5 ? 60.0 : -60.0;
  EXPECT_NEAR(weighted_iou(Tensor({8, 8, 1}, z), g, pixel_weight_map(g)).item(), 0.0, 1e-15);
  for (auto& v : z) v = -v;
  EXPECT_NEAR(weighted_iou(Tensor({8, 8, 1}, z), g, Tensor({8, 8, 1}, 1.0)).item(), 1.0, 1e-15);
  // Empty union: no foreground anywhere.
  EXPECT_EQ(weighted_iou(Tensor({4, 4, 1}, -800.0), Tensor({4, 4, 1}, 0.0), Tensor({4, 4, 1}, 1.0)).item(),
            0.0);
}

TEST(Losses, MatchPerPixelOracles) {
  std::mt19937_64 gen(6);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor g = random_mask(16, 16, gen, std::uniform_real_distribution<double>(0.05, 0.9)(gen));
    Tensor z = random_tensor({16, 16, 1}, gen, -6, 6);
    Tensor w = pixel_weight_map(g);
    const auto wo = weight_oracle(g, 5.0, 15);
    EXPECT_NEAR(weighted_bce(z, g, w).item(), bce_oracle(z, g, wo), 1e-12);
    EXPECT_NEAR(weighted_iou(z, g, w).item(), iou_oracle(z, g, wo), 1e-12);
    const double s = structure_loss(z, g, w).item();
    EXPECT_NEAR(s, bce_oracle(z, g, wo) + iou_oracle(z, g, wo), 1e-12);
    EXPECT_GE(s, 0.0);
    const double iou = weighted_iou(z, g, w).item();
    EXPECT_GE(iou, 0.0);
    EXPECT_LE(iou, 1.0);
  }
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  std::mt19937_64 gen(7);
  Tensor g = random_mask(10, 10, gen);
  Tensor w = pixel_weight_map(g);
  for (auto loss : {&weighted_bce, &weighted_iou}) {
    Tensor z = random_tensor({10, 10, 1}, gen, -4, 4, true);
    backward((*loss)(z, g, w));
    std::vector<double> analytic(z.grad().begin(), z.grad().end());
    auto f = [&] {
      NoGradGuard ng;
      return (*loss)(z, g, w).item();
    };
    EXPECT_LE(dstu::test::max_rel_error(analytic, dstu::test::numeric_grad(f, z, 1e-5), 1e-10), 1e-5);
  }
}

TEST(Losses, InvariantUnderPixelPermutation) {
  std::mt19937_64 gen(8);
  Tensor g = random_mask(12, 12, gen);
  Tensor z = random_tensor({12, 12, 1}, gen, -3, 3);
  Tensor w = pixel_weight_map(g);
  std::vector<std::size_t> perm(144);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), gen);
  std::vector<double> gp(144), zp(144), wp(144);
  for (std::size_t i = 0; i < 144; ++i) {
    gp[i] = g[perm[i]];
    zp[i] = z[perm[i]];
    wp[i] = w[perm[i]];
  }
  Tensor G({12, 12, 1}, gp), Z({12, 12, 1}, zp), W({12, 12, 1}, wp);
  EXPECT_NEAR(weighted_bce(z, g, w).item(), weighted_bce(Z, G, W).item(), 1e-12);
  EXPECT_NEAR(weighted_iou(z, g, w).item(), weighted_iou(Z, G, W).item(), 1e-12);
}

TEST(TotalLoss, EqualOutputsCollapseToSingleTerm) {
  std::mt19937_64 gen(9);
  Tensor g = random_mask(16, 16, gen);
  Tensor z = random_tensor({16, 16, 1}, gen, -3, 3);
  const double single = structure_loss(z, g, pixel_weight_map(g)).item();
  EXPECT_NEAR(total_loss({z, z, z}, g, LossWeights{}).item(), single, 1e-12);
  LossWeights only_main{1.0, 0.0, 0.0};
  Tensor other = random_tensor({16, 16, 1}, gen, -3, 3);
  EXPECT_NEAR(total_loss({z, other, other}, g, only_main).item(), single, 1e-12);
  LossWeights defaults;
  EXPECT_EQ(defaults.alpha, 0.6);
  EXPECT_EQ(defaults.beta, 0.2);
  EXPECT_EQ(defaults.gamma, 0.2);
}

TEST(TotalLoss, WeightsEachHead) {
  std::mt19937_64 gen(10);
  Tensor g = random_mask(16, 16, gen);
  Tensor w = pixel_weight_map(g);
  Tensor a = random_tensor({16, 16, 1}, gen, -3, 3), b = random_tensor({16, 16, 1}, gen, -3, 3),
         c = random_tensor({16, 16, 1}, gen, -3, 3);
  const double expect = 0.6 * structure_loss(a, g, w).item() + 0.2 * structure_loss(b, g, w).item() +
                        0.2 * structure_loss(c, g, w).item();
  EXPECT_NEAR(total_loss({a, b, c}, g, LossWeights{}).item(), expect, 1e-12);
}

TEST(Metrics, IdenticalNonEmptyMasks) {
  std::mt19937_64 gen(11);
  auto m = to_bits(random_mask(16, 16, gen));
  m[0] = 1;
  const MetricReport r = seg_metrics(m, m);
  EXPECT_EQ(r.mdice, 1.0);
  EXPECT_EQ(r.miou, 1.0);
  EXPECT_EQ(r.precision, 1.0);
  EXPECT_EQ(r.recall, 1.0);
}

TEST(Metrics, OneOfEachCount) {
  const std::vector<unsigned char> pred{1, 1, 0, 0}, truth{1, 0, 1, 0};
  const MetricReport r = seg_metrics(pred, truth);
  EXPECT_DOUBLE_EQ(r.mdice, 0.5);
  EXPECT_DOUBLE_EQ(r.miou, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.precision, 0.5);
  EXPECT_DOUBLE_EQ(r.recall, 0.5);
}

TEST(Metrics, EmptyPredictionHasZeroRecall) {
  std::vector<unsigned char> truth(16, 0), pred(16, 0);
  truth[3] = 1;
  EXPECT_EQ(seg_metrics(pred, truth).recall, 0.0);
  EXPECT_EQ(seg_metrics(pred, truth).mdice, 0.0);
  const MetricReport both_empty = seg_metrics(pred, pred);
  EXPECT_EQ(both_empty.mdice, 1.0);
  EXPECT_EQ(both_empty.precision, 1.0);
}

TEST(Metrics, MatchPixelCountOracleAndDiceIouIdentity) {
  std::mt19937_64 gen(12);
  for (int trial = 0; trial < 100; ++trial) {
    auto p = to_bits(random_mask(16, 16, gen, 0.3)), t = to_bits(random_mask(16, 16, gen, 0.3));
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < 256; ++i) {
      tp += p[i] && t[i];
      fp += p[i] && !t[i];
      fn += !p[i] && t[i];
    }
    const MetricReport r = seg_metrics(p, t);
    EXPECT_NEAR(r.mdice, 2 * tp / (2 * tp + fp + fn), 1e-15);
    EXPECT_NEAR(r.miou, tp / (tp + fp + fn), 1e-15);
    EXPECT_NEAR(r.precision, tp / (tp + fp), 1e-15);
    EXPECT_NEAR(r.recall, tp / (tp + fn), 1e-15);
    EXPECT_NEAR(r.mdice, 2 * r.miou / (1 + r.miou), 1e-15);
  }
}

TEST(Metrics, BinarizeAndMean) {
  Tensor z({4}, std::vector<double>{-1.0, 0.0, 1e-9, 3.0});
  EXPECT_EQ(binarize_logits(z), (std::vector<unsigned char>{0, 0, 1, 1}));
  const MetricReport m = mean_report({{1.0, 1.0, 1.0, 1.0}, {0.0, 0.5, 0.25, 0.75}});
  EXPECT_DOUBLE_EQ(m.mdice, 0.5);
  EXPECT_DOUBLE_EQ(m.miou, 0.75);
  EXPECT_DOUBLE_EQ(m.precision, 0.625);
  EXPECT_DOUBLE_EQ(m.recall, 0.875);
  EXPECT_THROW(seg_metrics({1, 0}, {1}), std::invalid_argument);
}
