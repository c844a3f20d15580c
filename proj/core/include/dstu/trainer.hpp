#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dstu/config.hpp"
#include "dstu/dataset.hpp"
#include "dstu/losses.hpp"
#include "dstu/model.hpp"

namespace dstu {

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;        // mean batch loss
  double train_mdice = 0.0;
  double val_mdice = 0.0;   // equals train_mdice without a validation split
};

struct TrainResult {
  std::vector<EpochRecord> history;
  double best_metric = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  bool early_stopped = false;
  bool reached_target = false;
  std::vector<std::uint8_t> best_checkpoint;
  std::vector<std::size_t> train_indices, val_indices;
};

/// Deterministic split: a seeded permutation, the first round(n * fraction)
/// entries validate. At least one sample always trains.
void split_indices(std::size_t n, double val_fraction, std::uint64_t seed,
                   std::vector<std::size_t>& train, std::vector<std::size_t>& val);

/// Samples from `config.data_dir`, or synthetic ones when it is empty.
std::vector<Sample> training_data(const RunConfig& config);

/// SGD with momentum under a cosine schedule. Each batch is resized by a
/// scale drawn from `multi_scale_factors`. After every epoch the weights are
/// rounded to checkpoint precision and scored; the best-scoring checkpoint
/// is kept. One line per epoch goes to `log`.
/// Throws NumericError naming the epoch and batch on a non-finite value.
TrainResult train(const RunConfig& config, const std::vector<Sample>& samples, std::ostream& log);

struct EvalResult {
  std::vector<std::string> ids;
  std::vector<MetricReport> reports;
  MetricReport mean;
};

/// Scores S1 against each mask. With `mask_dir` set, writes ID.pred.pgm
/// there as 0/255.
EvalResult evaluate(const Model& model, const std::vector<Sample>& samples,
                    const std::filesystem::path& mask_dir = {});
EvalResult evaluate(const Model& model, const std::vector<Sample>& samples,
                    const std::vector<std::size_t>& subset);

/// image_id,mdice,miou,precision,recall; one row per image, then `mean`.
void write_metrics_csv(std::ostream& os, const EvalResult& result);
/// Human-readable summary lines.
void write_metrics_text(std::ostream& os, const EvalResult& result);

}  // namespace dstu
