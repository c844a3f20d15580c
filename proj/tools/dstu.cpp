// dstu: train, evaluate and gradient-check the dual-scale segmentation model.
//
// Exit codes: 0 success, 1 I/O or check failure, 2 invalid configuration or
// incompatible input, 3 numerical abort.

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "dstu/checkpoint.hpp"
#include "dstu/config.hpp"
#include "dstu/dataset.hpp"
#include "dstu/gradcheck.hpp"
#include "dstu/losses.hpp"
#include "dstu/model.hpp"
#include "dstu/trainer.hpp"

namespace {

using namespace dstu;

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kInvalid = 2;
constexpr int kNumeric = 3;

std::filesystem::path sidecar(const std::filesystem::path& checkpoint) {
  return std::filesystem::path(checkpoint.string() + ".cfg");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

int run_train(const std::string& config_path, std::optional<std::uint64_t> seed) {
  RunConfig config = load_run_config(config_path);
  if (seed) config.seed = config.model.seed = *seed;
  config.validate();
  const auto samples = training_data(config);

  std::ostringstream log;
  TrainResult result;
  try {
    result = train(config, samples, log);
  } catch (...) {
    write_text(config.log_path, log.str());
    throw;
  }
  write_text(config.log_path, log.str());
  std::cout << log.str();

  const auto& bytes = result.best_checkpoint;
  std::ofstream os(config.checkpoint_path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + config.checkpoint_path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  write_text(sidecar(config.checkpoint_path), serialize(config));
  std::cout << "checkpoint " << config.checkpoint_path.string() << '\n';
  return kOk;
}

int run_eval(const std::string& checkpoint, const std::string& data, const std::string& masks,
             std::string config_path, const std::string& csv_path) {
  if (config_path.empty()) config_path = sidecar(checkpoint).string();
  if (!std::filesystem::exists(config_path))
    throw ConfigError("no model config: pass --config or keep " + config_path);
  const RunConfig config = load_run_config(config_path);
  Model model(config.model);
  load_checkpoint(checkpoint, model.store());

  const auto samples = load_dataset(data);
  for (const auto& s : samples) config.model.validate_resolution(s.image.dim(0), s.image.dim(1));
  const EvalResult result = evaluate(model, samples, masks);

  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot write " + csv_path);
  write_metrics_csv(csv, result);
  write_metrics_text(std::cout, result);
  return kOk;
}

int run_gradcheck(const std::string& config_path, const GradCheckOptions& opts) {
  const RunConfig config = load_run_config(config_path);
  config.validate();
  Model model(config.model);
  const Sample sample = synthetic_sample(config.model.image_size, config.seed, 0);
  auto forward = [&] { return total_loss(model.forward(sample.image), sample.mask, config.loss); };
  const GradCheckReport report = grad_check(forward, model.store().params(), opts);
  for (const auto& e : report.entries) {
    std::cout << (e.max_rel_error <= report.tol ? "ok   " : "FAIL ") << e.name << " probed "
              << e.probed << " rel " << e.max_rel_error << " abs " << e.max_abs_error;
    if (e.kinked) std::cout << " kinked " << e.kinked << " smooth rel " << e.max_rel_error_smooth;
    std::cout << '\n';
  }
  std::cout << "max relative error " << report.max_rel_error << " tol " << report.tol << ' '
            << (report.passed ? "PASS" : "FAIL") << '\n';
  if (report.kinked)
    std::cout << report.kinked << " probes crossed a relu kink; max relative error elsewhere "
              << report.max_rel_error_smooth << '\n';
  return report.passed ? kOk : kFailure;
}

int run_gen(std::size_t n, std::size_t res, std::uint64_t seed, const std::string& out) {
  save_dataset(out, gen_synthetic(n, res, seed));
  std::cout << "wrote " << n << " samples to " << out << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-scale Swin segmentation: train, eval, gradcheck, gen-data"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, data, masks, csv_path = "metrics.csv", out;
  std::uint64_t seed = 0;
  std::size_t n = 0, res = 0;
  GradCheckOptions gc;
  gc.tol = 1e-3;
  gc.max_entries_per_param = 6;

  auto* train_cmd = app.add_subcommand("train", "train from a key=value config");
  train_cmd->add_option("--config", config_path, "config file")->required();
  auto* seed_opt = train_cmd->add_option("--seed", seed, "override the config seed");

  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a dataset directory");
  eval_cmd->add_option("--checkpoint", checkpoint)->required();
  eval_cmd->add_option("--data", data)->required();
  eval_cmd->add_option("--emit-masks", masks, "write predicted masks as PGM");
  eval_cmd->add_option("--config", config_path, "model config (default: CHECKPOINT.cfg)");
  eval_cmd->add_option("--csv", csv_path, "per-image metrics table")->capture_default_str();

  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference audit of every parameter");
  gc_cmd->set_help_flag("--help", "print this help message and exit");  // frees "--h" for the step
  gc_cmd->add_option("--config", config_path)->required();
  gc_cmd->add_option("--h", gc.h)->capture_default_str();
  gc_cmd->add_option("--tol", gc.tol)->capture_default_str();
  gc_cmd->add_option("--entries", gc.max_entries_per_param, "entries per parameter, 0 = all")
      ->capture_default_str();

  auto* gen_cmd = app.add_subcommand("gen-data", "write a synthetic dataset");
  gen_cmd->add_option("--n", n)->required();
  gen_cmd->add_option("--res", res)->required();
  gen_cmd->add_option("--seed", seed)->required();
  gen_cmd->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (*train_cmd)
      return run_train(config_path, *seed_opt ? std::optional<std::uint64_t>(seed) : std::nullopt);
    if (*eval_cmd) return run_eval(checkpoint, data, masks, config_path, csv_path);
    if (*gc_cmd) return run_gradcheck(config_path, gc);
    if (*gen_cmd) return run_gen(n, res, seed, out);
  } catch (const NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::invalid_argument& e) {  // ConfigError, ShapeError
    std::cerr << "invalid: " << e.what() << '\n';
    return kInvalid;
  } catch (const CheckpointError& e) {
    std::cerr << "invalid checkpoint: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
