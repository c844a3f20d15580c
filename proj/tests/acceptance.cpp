// Acceptance gate: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset. Exits non-zero when any selected criterion
// fails.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "dstu/checkpoint.hpp"
#include "dstu/dataset.hpp"
#include "dstu/gradcheck.hpp"
#include "dstu/losses.hpp"
#include "dstu/ops.hpp"
#include "dstu/trainer.hpp"
#include "support.hpp"

using namespace dstu;
using dstu::test::bit_equal;
using dstu::test::max_abs_diff;
using dstu::test::random_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

RunConfig toy_config() { return load_run_config(DSTU_TOY_CONFIG); }

void randomize(ParamStore& store, std::mt19937_64& gen, double amp) {
  std::uniform_real_distribution<double> d(-amp, amp);
  for (auto& p : store.params())
    for (auto& v : p.tensor.mutable_data()) v += d(gen);
}

std::size_t pick(std::mt19937_64& gen, std::initializer_list<std::size_t> xs) {
  return *(xs.begin() + std::uniform_int_distribution<std::size_t>(0, xs.size() - 1)(gen));
}

// 1. Finite-difference audit of every parameter tensor of the toy model.
Outcome gradient_audit() {
  const RunConfig config = toy_config();
  Model model(config.model);
  const Sample sample = synthetic_sample(config.model.image_size, config.seed, 0);
  auto forward = [&] { return total_loss(model.forward(sample.image), sample.mask, config.loss); };
  GradCheckOptions opts;
  opts.h = 1e-5;
  opts.tol = 1e-3;
  opts.max_entries_per_param = 8;
  const double t0 = cpu_seconds();
  const GradCheckReport r = grad_check(forward, model.store().params(), opts);
  const double secs = cpu_seconds() - t0;
  std::size_t probed = 0;
  std::string worst;
  double worst_err = -1.0;
  for (const auto& e : r.entries) {
    probed += e.probed;
    if (e.max_rel_error > worst_err) {
      worst_err = e.max_rel_error;
      worst = e.name;
    }
  }
  return {r.passed && secs <= 600.0,
          fmt("%zu tensors, %zu entries, max rel err %.3g (%s), %zu probes across a relu kink, "
              "max rel err off kinks %.3g, %.0f s cpu",
              r.entries.size(), probed, r.max_rel_error, worst.c_str(), r.kinked,
              r.max_rel_error_smooth, secs)};
}

// 2. Shifted windows against independent attention over pre-shift sub-windows.
Outcome sw_msa_oracle() {
  std::mt19937_64 gen(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t M = pick(gen, {2, 3, 4, 5, 6, 7});
    const std::size_t H = M * std::uniform_int_distribution<std::size_t>(1, 4)(gen);
    const std::size_t W = M * std::uniform_int_distribution<std::size_t>(1, 4)(gen);
    const std::size_t heads = pick(gen, {1, 2, 3});
    const std::size_t C = heads * std::uniform_int_distribution<std::size_t>(1, 4)(gen);
    ParamStore store(trial);
    WindowAttnParams p = make_window_attn(store, "a", C, heads, M);
    randomize(store, gen, 0.5);
    const Tensor x = random_tensor({H, W, C}, gen);
    const std::size_t s = M / 2;
    const double d =
        max_abs_diff(shifted_window_attention(x, p, s).data(), dstu::test::sub_window_oracle(x, p, s));
    worst = std::max(worst, d);
  }
  return {worst <= 1e-6, fmt("100 cases, max |delta| %.3g", worst)};
}

// 3. Resolution and width laws over randomized valid configurations.
Outcome shape_laws() {
  std::mt19937_64 gen(7);
  const Mode modes[] = {Mode::Base, Mode::SwinUNet, Mode::SwinDecoder, Mode::MultiScaleSD,
                        Mode::DualSwin};
  std::size_t accepted = 0, violations = 0;
  std::string first;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok && violations++ == 0) first = what;
  };
  while (accepted < 20) {
    ModelConfig c;
    c.mode = modes[std::uniform_int_distribution<int>(0, 4)(gen)];
    const std::size_t H = pick(gen, {64, 128, 192}), W = pick(gen, {64, 128, 192});
    c.image_size = H;
    c.window_size = pick(gen, {2, 4, 8});
    c.dim = pick(gen, {4, 8, 12});
    c.complementary_dim = pick(gen, {4, 8});
    for (std::size_t i = 0; i < 4; ++i) {
      c.depths[i] = pick(gen, {1, 2});
      c.complementary_depths[i] = pick(gen, {1, 2});
      c.heads[i] = pick(gen, {1, 2, 4});
      c.complementary_heads[i] = pick(gen, {1, 2, 4});
    }
    c.decoder_heads = {pick(gen, {1, 2, 4}), pick(gen, {1, 2}), pick(gen, {1, 2})};
    c.low_level_dim = pick(gen, {4, 8});
    c.seed = accepted;
    try {
      c.validate();
      c.validate_resolution(H, W);
    } catch (const ConfigError&) {
      continue;
    }
    ++accepted;
    const std::string tag = to_string(c.mode) + " " + std::to_string(H) + "x" + std::to_string(W);
    Model model(c);
    ForwardTrace t;
    Prediction pred;
    {
      NoGradGuard ng;
      pred = model.forward(random_tensor({H, W, 3}, gen, 0, 1), &t);
    }
    for (std::size_t i = 0; i < 4; ++i) {
      const std::size_t f = 4u << i;  // H/4, H/8, H/16, H/32
      check(t.primary_stages[i] == Shape{H / f, W / f, c.dim << i}, tag + " primary stage");
      if (is_dual(c.mode))  // H/8 .. H/64
        check(t.complementary_stages[i] == Shape{H / (2 * f), W / (2 * f), c.complementary_dim << i},
              tag + " complementary stage");
      if (i > 0) {
        const Shape& a = t.primary_stages[i - 1];
        const Shape& b = t.primary_stages[i];
        check(a[0] * a[1] == 4 * b[0] * b[1] && b[2] == 2 * a[2], tag + " merge law");
      }
    }
    for (std::size_t k = 0; k < 3; ++k) {
      const std::size_t f = 16u >> k;  // H/16, H/8, H/4
      check(t.decoder_outputs[k][0] == H / f && t.decoder_outputs[k][1] == W / f, tag + " decoder");
    }
    for (const Tensor* s : {&pred.s1, &pred.s2, &pred.s3})
      check(s->shape() == Shape{H, W, 1}, tag + " head");
    // patch_merge directly on an arbitrary even grid.
    const std::size_t ch = pick(gen, {1, 3, 5});
    const Tensor m = patch_merge(random_tensor({2 * (accepted % 5 + 1), 2 * (accepted % 3 + 1), ch}, gen),
                                 random_tensor({4 * ch, 2 * ch}, gen));
    check(m.dim(0) == accepted % 5 + 1 && m.dim(1) == accepted % 3 + 1 && m.dim(2) == 2 * ch,
          tag + " patch_merge");
  }
  return {violations == 0,
          violations == 0 ? "20 configs, all laws hold"
                          : fmt("%zu violations, first: %s", violations, first.c_str())};
}

// 4. Cross-scale token interaction contract.
Outcome tif_contract() {
  std::mt19937_64 gen(4);
  std::vector<std::string> bad;
  // Shape preservation.
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t heads = pick(gen, {1, 2}), C = heads * pick(gen, {2, 4});
    ParamStore store(trial);
    auto block = make_transformer_block(store, "t", C, heads);
    randomize(store, gen, 0.3);
    const Tensor f = random_tensor({pick(gen, {1, 2, 4}), pick(gen, {1, 3, 4}), C}, gen);
    if (tif_interact(f, random_tensor({1, C}, gen), block).shape() != f.shape()) bad.push_back("shape");
  }
  // Permutation invariance of the summary.
  double perm_err = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t h = pick(gen, {2, 4, 8}), w = pick(gen, {2, 4, 8}), c = pick(gen, {3, 8});
    const Tensor g = random_tensor({h, w, c}, gen, -5, 5);
    std::vector<std::size_t> order(h * w);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), gen);
    std::vector<double> moved(g.size());
    for (std::size_t t = 0; t < h * w; ++t)
      for (std::size_t k = 0; k < c; ++k) moved[t * c + k] = g[order[t] * c + k];
    const Tensor pw = random_tensor({c, 6}, gen), pb = random_tensor({6}, gen);
    perm_err = std::max(perm_err, max_abs_diff(summarize(g, pw, pb).data(),
                                               summarize(Tensor({h, w, c}, moved), pw, pb).data()));
  }
  if (perm_err > 1e-9) bad.push_back("summary permutation");
  // Two transformer blocks per fused stage in the full model, none when ablated.
  const RunConfig toy = toy_config();
  const Tensor image = synthetic_sample(64, 1, 0).image;
  ModelConfig full = toy.model, ablated = toy.model;
  full.mode = Mode::DualSwin;
  ablated.mode = Mode::MultiScaleSD;
  Model mf(full), ma(ablated);
  ForwardTrace tf, ta;
  {
    NoGradGuard ng;
    reset_transformer_block_calls();
    mf.forward(image, &tf);
    if (transformer_block_calls() != 8) bad.push_back("call count");
    reset_transformer_block_calls();
    ma.forward(image, &ta);
    if (transformer_block_calls() != 0) bad.push_back("ablated call count");
  }
  for (std::size_t i = 0; i < 4; ++i) {
    if (tf.transformer_blocks[i] != 2) bad.push_back("stage calls");
    if (ta.fused[i] != tf.fused[i]) bad.push_back("ablated fused shape");
  }
  // Removing the interaction parameters from the full model leaves exactly
  // the ablated model's parameters.
  std::set<std::pair<std::string, Shape>> left, right;
  for (const auto& p : mf.store().params()) {
    const bool tif = p.name.rfind("fusion.", 0) == 0 &&
                     (p.name.find(".summary_to_") != std::string::npos ||
                      p.name.find("_block.") != std::string::npos);
    if (!tif) left.insert({p.name, p.tensor.shape()});
  }
  for (const auto& p : ma.store().params()) right.insert({p.name, p.tensor.shape()});
  if (left != right) bad.push_back("ablated parameter set");
  // The ablated stage is concat(F, up2(G)) followed by a 1x1 projection.
  ParamStore store(9);
  auto fp = make_fusion_stage(store, "f", 6, 2, 3, 1, 6, false, true);
  randomize(store, gen, 0.4);
  const Tensor f = random_tensor({4, 4, 6}, gen), g = random_tensor({2, 2, 3}, gen);
  const Tensor y = fuse_stage(f, g, fp);
  double cc_err = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t o = 0; o < 6; ++o) {
        double s = fp.merge_b[o];
        for (std::size_t c = 0; c < 6; ++c) s += f[(i * 4 + j) * 6 + c] * fp.merge_w[c * 6 + o];
        for (std::size_t c = 0; c < 3; ++c)
          s += g[((i / 2) * 2 + j / 2) * 3 + c] * fp.merge_w[(6 + c) * 6 + o];
        cc_err = std::max(cc_err, std::abs(y[(i * 4 + j) * 6 + o] - s));
      }
  if (cc_err > 1e-12) bad.push_back("concat projection");
  std::string detail = fmt("summary perm err %.3g, 2 blocks x 4 stages, ablation = concat+proj", perm_err);
  if (!bad.empty()) detail = "failed: " + bad.front();
  return {bad.empty(), detail};
}

// 5. Losses and metrics against per-pixel brute force.
Outcome loss_metric_oracles() {
  std::mt19937_64 gen(5);
  double loss_err = 0.0, metric_err = 0.0, total_err = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double fg = std::uniform_real_distribution<double>(0.0, 1.0)(gen);
    std::bernoulli_distribution coin(fg);
    std::vector<double> gv(256);
    for (auto& v : gv) v = coin(gen) ? 1.0 : 0.0;
    const Tensor g({16, 16, 1}, gv);
    const Tensor z = random_tensor({16, 16, 1}, gen, -8, 8);
    const Tensor w = pixel_weight_map(g);
    const auto wo = dstu::test::weight_oracle(g, 5.0, 15);
    loss_err = std::max({loss_err, max_abs_diff(w.data(), wo),
                         std::abs(weighted_bce(z, g, w).item() - dstu::test::bce_oracle(z, g, wo)),
                         std::abs(weighted_iou(z, g, w).item() - dstu::test::iou_oracle(z, g, wo))});

    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < 256; ++i) {
      const bool p = 1.0 / (1.0 + std::exp(-z[i])) > 0.5, t = gv[i] > 0.5;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
    // A zero denominator scores 1 when the other mask is empty too, else 0.
    auto ratio = [](double num, double den, bool other_empty) {
      return den == 0.0 ? (other_empty ? 1.0 : 0.0) : num / den;
    };
    const bool pred_empty = tp + fp == 0, truth_empty = tp + fn == 0;
    const MetricReport r = seg_metrics(binarize_logits(z), binarize_mask(g));
    metric_err = std::max({metric_err, std::abs(r.mdice - ratio(2 * tp, 2 * tp + fp + fn, true)),
                           std::abs(r.miou - ratio(tp, tp + fp + fn, true)),
                           std::abs(r.precision - ratio(tp, tp + fp, truth_empty)),
                           std::abs(r.recall - ratio(tp, tp + fn, pred_empty))});

    const double single = dstu::test::bce_oracle(z, g, wo) + dstu::test::iou_oracle(z, g, wo);
    total_err = std::max(total_err, std::abs(total_loss({z, z, z}, g, LossWeights{0.6, 0.2, 0.2}).item() -
                                             structure_loss(z, g, w).item()));
    loss_err = std::max(loss_err, std::abs(structure_loss(z, g, w).item() - single));
  }
  return {loss_err <= 1e-9 && metric_err <= 1e-9 && total_err <= 1e-12,
          fmt("1000 masks, loss err %.3g, metric err %.3g, combined-loss err %.3g", loss_err,
              metric_err, total_err)};
}

// 6. Bit-exact round trips.
Outcome round_trips() {
  std::mt19937_64 gen(6);
  bool ok = true;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t M = pick(gen, {1, 2, 3, 4, 7});
    const std::size_t H = M * pick(gen, {1, 2, 3}), W = M * pick(gen, {1, 2, 5}), C = pick(gen, {1, 4});
    const Tensor x = random_tensor({H, W, C}, gen, -1e3, 1e3);
    ok = ok && bit_equal(window_reverse(window_partition(x, M), M, H, W).data(), x.data());
    const long dy = std::uniform_int_distribution<long>(-20, 20)(gen);
    const long dx = std::uniform_int_distribution<long>(-20, 20)(gen);
    ok = ok && bit_equal(roll2d(roll2d(x, dy, dx), -dy, -dx).data(), x.data());
  }
  const bool tensors_ok = ok;

  const RunConfig toy = toy_config();
  Model a(toy.model);
  round_to_checkpoint_precision(a.store());
  const auto path = std::filesystem::temp_directory_path() / "dstu_acceptance.dstu";
  save_checkpoint(path, a.store());
  ModelConfig other = toy.model;
  other.seed = 12345;
  Model b(other);
  load_checkpoint(path, b.store());
  const Tensor image = synthetic_sample(64, 3, 0).image;
  NoGradGuard ng;
  const Prediction pa = a.forward(image), pb = b.forward(image);
  const bool ckpt_ok = bit_equal(pa.s1.data(), pb.s1.data()) && bit_equal(pa.s2.data(), pb.s2.data()) &&
                       bit_equal(pa.s3.data(), pb.s3.data()) &&
                       encode_checkpoint(b.store()) == encode_checkpoint(a.store());
  std::filesystem::remove(path);
  return {tensors_ok && ckpt_ok,
          fmt("window/roll %s, checkpoint forward %s", tensors_ok ? "bit-exact" : "MISMATCH",
              ckpt_ok ? "bit-exact" : "MISMATCH")};
}

// 7. Toy learning check. Every run trains the full 200 epochs with the
// target disabled, so full and Base get the same budget; the full model's
// seed-0 run must cross 0.95 somewhere in it.
Outcome learning_check() {
  RunConfig base = toy_config();
  const double target = base.target_mdice;
  base.target_mdice = 0.0;
  base.early_stop_patience = base.epochs;
  std::string detail;
  std::size_t base_not_better = 0;
  bool reached = false;
  double full_cpu = 0.0;
  for (std::uint64_t seed : {0, 1, 2}) {
    double final_mdice[2] = {0, 0};
    for (int k = 0; k < 2; ++k) {
      RunConfig c = base;
      c.seed = c.model.seed = seed;
      c.model.mode = k == 0 ? Mode::DualSwin : Mode::Base;
      std::ostringstream log;
      const double t0 = cpu_seconds();
      const TrainResult r = train(c, training_data(c), log);
      const double secs = cpu_seconds() - t0;
      final_mdice[k] = r.history.back().train_mdice;
      if (k == 0 && seed == 0) {
        full_cpu = secs;
        for (const auto& e : r.history)
          if (e.train_mdice >= target) {
            reached = true;
            detail += fmt("full seed 0 reaches %.2f at epoch %zu; ", target, e.epoch);
            break;
          }
        if (!reached) detail += fmt("full seed 0 never reaches %.2f; ", target);
      }
    }
    base_not_better += final_mdice[1] <= final_mdice[0];
    detail += fmt("seed %llu full %.6f base %.6f; ", static_cast<unsigned long long>(seed),
                  final_mdice[0], final_mdice[1]);
  }
  detail += fmt("base <= full in %zu/3; full 200-epoch run %.0f s cpu", base_not_better, full_cpu);
  return {reached && full_cpu <= 1800.0 && base_not_better >= 2, detail};
}

// 8. Two identical runs give identical bytes.
Outcome determinism() {
  RunConfig c = toy_config();
  c.epochs = 3;
  c.target_mdice = 0.0;
  std::ostringstream log1, log2;
  const TrainResult a = train(c, training_data(c), log1);
  const TrainResult b = train(c, training_data(c), log2);
  const bool ok = a.best_checkpoint == b.best_checkpoint && log1.str() == log2.str();
  return {ok, fmt("3 epochs, checkpoint %zu bytes %s, log %s", a.best_checkpoint.size(),
                  a.best_checkpoint == b.best_checkpoint ? "identical" : "DIFFERS",
                  log1.str() == log2.str() ? "identical" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    const char* name;
    Outcome (*run)();
  };
  const Criterion criteria[] = {
      {"gradient audit", gradient_audit},       {"SW-MSA oracle", sw_msa_oracle},
      {"shape laws", shape_laws},               {"TIF contract", tif_contract},
      {"loss/metric oracles", loss_metric_oracles}, {"round trips", round_trips},
      {"learning check", learning_check},       {"determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));
  int failures = 0;
  for (int i = 0; i < 8; ++i) {
    if (!selected.empty() && !selected.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
