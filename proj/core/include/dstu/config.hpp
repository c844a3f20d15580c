#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace dstu {

/// Raised when a configuration violates a divisibility or range constraint.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Architecture variants; each adds one component on top of the previous.
enum class Mode {
  Base,           // single branch, progressive conv upsampling, no skips
  SwinUNet,       // single branch, conv decoder with skips
  SwinDecoder,    // single branch, Swin-block decoder with skips
  MultiScaleSD,   // dual branch fused by concat + projection
  DualSwin,    // dual branch fused by TIF
};

std::string to_string(Mode mode);
Mode parse_mode(const std::string& text);
bool is_dual(Mode mode);

enum class S2Source { Fused, Primary };

struct StageConfig {
  std::size_t depth = 2;
  std::size_t heads = 1;
  std::size_t dim = 16;
  std::size_t window = 4;  // effective window after clamping
  std::size_t shift = 2;   // 0 when the stage never shifts
};

struct BranchConfig {
  std::size_t patch_size = 4;
  std::size_t base_dim = 16;
  std::array<StageConfig, 4> stages{};
};

struct DecoderStageConfig {
  std::size_t depth = 2;
  std::size_t heads = 1;
  std::size_t dim = 16;
  std::size_t window = 4;
  std::size_t shift = 2;
};

struct ModelConfig {
  Mode mode = Mode::DualSwin;
  std::size_t image_size = 64;
  std::size_t in_channels = 3;
  std::size_t patch_size = 4;
  std::size_t complementary_patch_size = 8;
  std::size_t dim = 16;
  std::size_t complementary_dim = 8;
  std::array<std::size_t, 4> depths{2, 2, 2, 2};
  std::array<std::size_t, 4> heads{1, 2, 4, 8};
  std::array<std::size_t, 4> complementary_depths{2, 2, 2, 2};
  std::array<std::size_t, 4> complementary_heads{1, 2, 4, 8};
  std::size_t window_size = 4;
  /// Stages whose side is not larger than the window use a single window of
  /// that side and no shift. When off, every side must divide window_size.
  bool window_clamp = true;
  std::array<std::size_t, 3> decoder_depths{2, 2, 2};
  std::array<std::size_t, 3> decoder_heads{8, 4, 2};
  /// Zero entries derive from the primary branch: 4C, 2C, C.
  std::array<std::size_t, 3> decoder_dims{0, 0, 0};
  std::size_t low_level_dim = 16;
  /// Merge both TIF outputs into the skip; off uses the primary output only.
  bool tif_merge = true;
  S2Source s2_source = S2Source::Fused;
  std::uint64_t seed = 0;

  BranchConfig primary() const;
  BranchConfig complementary() const;
  std::array<DecoderStageConfig, 3> decoder() const;

  /// Checks ranges, head divisibility and the divisibility laws at the
  /// nominal resolution. Throws ConfigError.
  void validate() const;
  /// Checks that an (height, width) input is compatible with the windows
  /// fixed at construction. Throws ConfigError naming the violated law.
  void validate_resolution(std::size_t height, std::size_t width) const;
};

struct OptimConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

struct LossWeights {
  double alpha = 0.6;
  double beta = 0.2;
  double gamma = 0.2;
};

struct RunConfig {
  ModelConfig model;
  OptimConfig optim;
  LossWeights loss;
  std::size_t epochs = 100;
  std::size_t batch_size = 4;
  std::size_t early_stop_patience = 20;
  double val_fraction = 0.1;
  std::vector<double> multi_scale_factors{0.75, 1.0, 1.25};
  /// Stop once train mDice reaches this value; 0 disables.
  double target_mdice = 0.0;
  std::uint64_t seed = 0;
  std::filesystem::path data_dir;
  std::size_t synthetic_samples = 16;
  std::filesystem::path checkpoint_path = "model.dstu";
  std::filesystem::path log_path = "train.log";

  /// Model validation plus every scaled training resolution.
  void validate() const;
};

/// Parses flat `key=value` lines; '#' starts a comment. Unknown keys and
/// malformed values throw ConfigError naming the line.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Canonical text form; parse_run_config(serialize(c)) reproduces c.
std::string serialize(const RunConfig& config);

}  // namespace dstu
