#include "dstu/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

#include "dstu/checkpoint.hpp"
#include "dstu/ops.hpp"
#include "dstu/optim.hpp"
#include "dstu/rng.hpp"

namespace dstu {

namespace {

// Stream tags for Rng::derive so the split, shuffles and scale draws never
// share state with initialization.
constexpr std::uint64_t kSplitTag = 0x5350'4c49'54ULL;
constexpr std::uint64_t kEpochTag = 0x4550'4f43'48ULL;

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

std::size_t scaled_side(std::size_t side, double factor) {
  return static_cast<std::size_t>(std::llround(factor * static_cast<double>(side)));
}

}  // namespace

void split_indices(std::size_t n, double val_fraction, std::uint64_t seed,
                   std::vector<std::size_t>& train, std::vector<std::size_t>& val) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::derive(seed, kSplitTag);
  shuffle(order, rng);
  std::size_t n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  if (n_val >= n) n_val = n == 0 ? 0 : n - 1;
  val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
}

std::vector<Sample> training_data(const RunConfig& config) {
  if (!config.data_dir.empty()) return load_dataset(config.data_dir);
  return gen_synthetic(config.synthetic_samples, config.model.image_size, config.seed);
}

TrainResult train(const RunConfig& config, const std::vector<Sample>& samples, std::ostream& log) {
  config.validate();
  if (samples.empty()) throw ConfigError("training set is empty");
  for (const auto& s : samples) {
    for (double f : config.multi_scale_factors)
      config.model.validate_resolution(scaled_side(s.image.dim(0), f), scaled_side(s.image.dim(1), f));
  }

  TrainResult result;
  split_indices(samples.size(), config.val_fraction, config.seed, result.train_indices,
                result.val_indices);
  const bool has_val = !result.val_indices.empty();

  Model model(config.model);
  auto& params = model.store().params();
  SgdState state;
  double best = -std::numeric_limits<double>::infinity();

  log << "params " << model.store().scalar_count() << " train " << result.train_indices.size()
      << " val " << result.val_indices.size() << " mode " << to_string(config.model.mode) << '\n';

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, config.epochs, config.optim.lr);
    Rng rng = Rng::derive(config.seed, kEpochTag + epoch);
    std::vector<std::size_t> order = result.train_indices;
    shuffle(order, rng);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batches) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const double factor =
          config.multi_scale_factors[rng.below(config.multi_scale_factors.size())];
      try {
        model.store().zero_grad();
        Tensor batch_loss;
        for (std::size_t k = start; k < stop; ++k) {
          const Sample& s = samples[order[k]];
          const std::size_t h = scaled_side(s.image.dim(0), factor);
          const std::size_t w = scaled_side(s.image.dim(1), factor);
          const Tensor image = resize_bilinear(s.image, h, w);
          const Tensor mask = resize_nearest(s.mask, h, w);
          const Tensor l = total_loss(model.forward(image), mask, config.loss);
          batch_loss = batch_loss.defined() ? add(batch_loss, l) : l;
        }
        const Tensor loss = scale(batch_loss, 1.0 / static_cast<double>(stop - start));
        if (!std::isfinite(loss.item())) throw NumericError("non-finite loss");
        backward(loss);
        materialize_grads(params);
        for (const auto& p : params)
          for (double g : p.tensor.grad())
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + p.name);
        sgd_step(params, state, config.optim, lr);
        loss_sum += loss.item();
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + " batch " + std::to_string(batches) +
                           ": " + e.what());
      }
    }

    // Score the weights exactly as a checkpoint would hold them.
    const auto bytes = encode_checkpoint(model.store());
    Model snapshot(config.model);
    decode_checkpoint(bytes, snapshot.store());

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.loss = loss_sum / static_cast<double>(batches);
    rec.train_mdice = evaluate(snapshot, samples, result.train_indices).mean.mdice;
    rec.val_mdice = has_val ? evaluate(snapshot, samples, result.val_indices).mean.mdice
                            : rec.train_mdice;
    result.history.push_back(rec);
    result.epochs_run = epoch + 1;

    if (rec.val_mdice > best) {
      best = rec.val_mdice;
      result.best_metric = best;
      result.best_epoch = epoch;
      result.best_checkpoint = bytes;
    }
    log << "epoch " << epoch << " lr " << fmt("%.8f", lr) << " loss " << fmt("%.8f", rec.loss)
        << " train_mdice " << fmt("%.6f", rec.train_mdice) << " val_mdice "
        << fmt("%.6f", rec.val_mdice) << " best " << fmt("%.6f", best) << '\n';

    if (config.target_mdice > 0.0 && rec.train_mdice >= config.target_mdice) {
      result.reached_target = true;
      log << "target train_mdice reached at epoch " << epoch << '\n';
      break;
    }
    if (epoch - result.best_epoch >= config.early_stop_patience) {
      result.early_stopped = true;
      log << "early stop at epoch " << epoch << ", best epoch " << result.best_epoch << '\n';
      break;
    }
  }
  log << "best " << (has_val ? "val" : "train") << "_mdice " << fmt("%.6f", result.best_metric)
      << " epoch " << result.best_epoch << '\n';
  return result;
}

namespace {

EvalResult evaluate_impl(const Model& model, const std::vector<const Sample*>& samples,
                         const std::filesystem::path& mask_dir) {
  NoGradGuard no_grad;
  if (!mask_dir.empty()) std::filesystem::create_directories(mask_dir);
  EvalResult out;
  for (const Sample* s : samples) {
    const Tensor logits = model.forward(s->image).s1;
    const auto pred = binarize_logits(logits);
    out.ids.push_back(s->id);
    out.reports.push_back(seg_metrics(pred, binarize_mask(s->mask)));
    if (!mask_dir.empty())
      write_mask_pgm(mask_dir / (s->id + ".pred.pgm"), pred, logits.dim(0), logits.dim(1));
  }
  out.mean = mean_report(out.reports);
  return out;
}

}  // namespace

EvalResult evaluate(const Model& model, const std::vector<Sample>& samples,
                    const std::filesystem::path& mask_dir) {
  std::vector<const Sample*> view;
  for (const auto& s : samples) view.push_back(&s);
  return evaluate_impl(model, view, mask_dir);
}

EvalResult evaluate(const Model& model, const std::vector<Sample>& samples,
                    const std::vector<std::size_t>& subset) {
  std::vector<const Sample*> view;
  for (std::size_t i : subset) view.push_back(&samples.at(i));
  return evaluate_impl(model, view, {});
}

void write_metrics_csv(std::ostream& os, const EvalResult& result) {
  auto row = [&](const std::string& id, const MetricReport& r) {
    os << id << ',' << fmt("%.9f", r.mdice) << ',' << fmt("%.9f", r.miou) << ','
       << fmt("%.9f", r.precision) << ',' << fmt("%.9f", r.recall) << '\n';
  };
  os << "image_id,mdice,miou,precision,recall\n";
  for (std::size_t i = 0; i < result.ids.size(); ++i) row(result.ids[i], result.reports[i]);
  row("mean", result.mean);
}

void write_metrics_text(std::ostream& os, const EvalResult& result) {
  os << "images " << result.ids.size() << '\n'
     << "mDice " << fmt("%.6f", result.mean.mdice) << '\n'
     << "mIoU " << fmt("%.6f", result.mean.miou) << '\n'
     << "precision " << fmt("%.6f", result.mean.precision) << '\n'
     << "recall " << fmt("%.6f", result.mean.recall) << '\n';
}

}  // namespace dstu
