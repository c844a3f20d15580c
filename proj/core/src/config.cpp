#include "dstu/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace dstu {

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::Base: return "base";
    case Mode::SwinUNet: return "swin_unet";
    case Mode::SwinDecoder: return "swin_decoder";
    case Mode::MultiScaleSD: return "multiscale_sd";
    case Mode::DualSwin: return "dual_swin";
  }
  return "unknown";
}

Mode parse_mode(const std::string& text) {
  for (Mode m : {Mode::Base, Mode::SwinUNet, Mode::SwinDecoder, Mode::MultiScaleSD,
                 Mode::DualSwin}) {
    if (to_string(m) == text) return m;
  }
  throw ConfigError("unknown model mode '" + text + "'");
}

bool is_dual(Mode mode) { return mode == Mode::MultiScaleSD || mode == Mode::DualSwin; }

namespace {

std::size_t stage_window(const ModelConfig& c, std::size_t side) {
  return c.window_clamp ? std::min(c.window_size, side) : c.window_size;
}

std::size_t stage_shift(const ModelConfig& c, std::size_t side) {
  if (c.window_clamp && side <= c.window_size) return 0;
  return c.window_size / 2;
}

BranchConfig make_branch(const ModelConfig& c, std::size_t patch, std::size_t base_dim,
                         const std::array<std::size_t, 4>& depths,
                         const std::array<std::size_t, 4>& heads) {
  BranchConfig b;
  b.patch_size = patch;
  b.base_dim = base_dim;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t side = patch == 0 ? 0 : c.image_size / (patch << i);
    b.stages[i].depth = depths[i];
    b.stages[i].heads = heads[i];
    b.stages[i].dim = base_dim << i;
    b.stages[i].window = stage_window(c, side);
    b.stages[i].shift = stage_shift(c, side);
  }
  return b;
}

void check_branch_resolution(const BranchConfig& b, const char* name, std::size_t extent,
                             const char* axis) {
  const std::size_t unit = b.patch_size * 8;
  if (extent % unit != 0)
    throw ConfigError(std::string(name) + " branch: " + axis + " extent " +
                      std::to_string(extent) + " is not divisible by patch_size*8 = " +
                      std::to_string(unit));
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t side = extent / (b.patch_size << i);
    const std::size_t win = b.stages[i].window;
    if (win == 0 || side % win != 0)
      throw ConfigError(std::string(name) + " branch stage " + std::to_string(i + 1) + ": " +
                        axis + " side " + std::to_string(side) +
                        " is not divisible by window " + std::to_string(win));
  }
}

void check_heads(const char* what, std::size_t dim, std::size_t heads) {
  if (heads == 0 || dim % heads != 0)
    throw ConfigError(std::string(what) + ": dim " + std::to_string(dim) +
                      " is not divisible by " + std::to_string(heads) + " heads");
}

}  // namespace

BranchConfig ModelConfig::primary() const {
  return make_branch(*this, patch_size, dim, depths, heads);
}

BranchConfig ModelConfig::complementary() const {
  return make_branch(*this, complementary_patch_size, complementary_dim, complementary_depths,
                     complementary_heads);
}

std::array<DecoderStageConfig, 3> ModelConfig::decoder() const {
  std::array<DecoderStageConfig, 3> out{};
  for (std::size_t j = 0; j < 3; ++j) {
    const std::size_t enc_stage = 2 - j;  // H/16, H/8, H/4
    const std::size_t side = patch_size == 0 ? 0 : image_size / (patch_size << enc_stage);
    out[j].depth = decoder_depths[j];
    out[j].heads = decoder_heads[j];
    out[j].dim = decoder_dims[j] != 0 ? decoder_dims[j] : (dim << enc_stage);
    out[j].window = stage_window(*this, side);
    out[j].shift = stage_shift(*this, side);
  }
  return out;
}

void ModelConfig::validate() const {
  if (image_size == 0) throw ConfigError("model.image_size must be positive");
  if (in_channels == 0) throw ConfigError("model.in_channels must be positive");
  if (patch_size == 0) throw ConfigError("model.patch_size must be positive");
  if (dim == 0) throw ConfigError("model.dim must be positive");
  if (window_size == 0) throw ConfigError("model.window_size must be positive");
  if (low_level_dim == 0) throw ConfigError("model.low_level_dim must be positive");
  const BranchConfig p = primary();
  for (std::size_t i = 0; i < 4; ++i) {
    if (p.stages[i].depth == 0) throw ConfigError("model.depths entries must be positive");
    check_heads(("primary stage " + std::to_string(i + 1)).c_str(), p.stages[i].dim,
                p.stages[i].heads);
  }
  if (is_dual(mode)) {
    if (complementary_patch_size != 2 * patch_size)
      throw ConfigError("model.complementary_patch_size must be twice model.patch_size, got " +
                        std::to_string(complementary_patch_size));
    if (complementary_dim == 0) throw ConfigError("model.complementary_dim must be positive");
    const BranchConfig c = complementary();
    for (std::size_t i = 0; i < 4; ++i) {
      if (c.stages[i].depth == 0)
        throw ConfigError("model.complementary_depths entries must be positive");
      check_heads(("complementary stage " + std::to_string(i + 1)).c_str(), c.stages[i].dim,
                  c.stages[i].heads);
    }
  }
  if (mode == Mode::SwinDecoder || is_dual(mode)) {
    for (const auto& d : decoder()) {
      if (d.depth == 0) throw ConfigError("model.decoder_depths entries must be positive");
      check_heads("decoder stage", d.dim, d.heads);
    }
  }
  validate_resolution(image_size, image_size);
}

void ModelConfig::validate_resolution(std::size_t height, std::size_t width) const {
  const BranchConfig p = primary();
  for (auto [extent, axis] : {std::pair{height, "height"}, std::pair{width, "width"}}) {
    check_branch_resolution(p, "primary", extent, axis);
    // Decoder sides coincide with primary stages 1-3 and share their windows.
    if (is_dual(mode)) check_branch_resolution(complementary(), "complementary", extent, axis);
  }
}

void RunConfig::validate() const {
  model.validate();
  if (epochs == 0) throw ConfigError("train.epochs must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    throw ConfigError("train.val_fraction must lie in [0, 1)");
  if (multi_scale_factors.empty()) throw ConfigError("train.multi_scale_factors is empty");
  if (optim.lr < 0.0 || optim.momentum < 0.0 || optim.weight_decay < 0.0)
    throw ConfigError("optimizer settings must be non-negative");
  if (loss.alpha < 0.0 || loss.beta < 0.0 || loss.gamma < 0.0)
    throw ConfigError("loss weights must be non-negative");
  for (double f : multi_scale_factors) {
    const double scaled = f * static_cast<double>(model.image_size);
    const double rounded = std::round(scaled);
    if (!(f > 0.0) || std::abs(scaled - rounded) > 1e-9)
      throw ConfigError("scale factor " + std::to_string(f) + " gives a non-integer resolution");
    try {
      model.validate_resolution(static_cast<std::size_t>(rounded),
                                static_cast<std::size_t>(rounded));
    } catch (const ConfigError& e) {
      throw ConfigError("scale factor " + std::to_string(f) + " (resolution " +
                        std::to_string(static_cast<std::size_t>(rounded)) + "): " + e.what());
    }
  }
  if (synthetic_samples == 0 && data_dir.empty())
    throw ConfigError("data.synthetic_samples must be positive when data.dir is empty");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw ConfigError("");
    return d;
  } catch (...) {
    throw ConfigError("expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true/false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <std::size_t N>
std::array<std::size_t, N> to_sizes(const std::string& v) {
  const auto items = split_list(v);
  if (items.size() != N)
    throw ConfigError("expected " + std::to_string(N) + " comma-separated integers, got '" + v +
                      "'");
  std::array<std::size_t, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = to_size(items[i]);
  return out;
}

template <std::size_t N>
std::string join(const std::array<std::size_t, N>& a) {
  std::string s;
  for (std::size_t i = 0; i < N; ++i) s += (i ? "," : "") + std::to_string(a[i]);
  return s;
}

std::string fmt_double(double d) {
  std::ostringstream os;
  os.precision(17);
  os << d;
  return os.str();
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", [](RunConfig& c, const std::string& v) { c.seed = to_size(v); }},
      {"model.mode", [](RunConfig& c, const std::string& v) { c.model.mode = parse_mode(v); }},
      {"model.image_size",
       [](RunConfig& c, const std::string& v) { c.model.image_size = to_size(v); }},
      {"model.in_channels",
       [](RunConfig& c, const std::string& v) { c.model.in_channels = to_size(v); }},
      {"model.patch_size",
       [](RunConfig& c, const std::string& v) { c.model.patch_size = to_size(v); }},
      {"model.complementary_patch_size",
       [](RunConfig& c, const std::string& v) { c.model.complementary_patch_size = to_size(v); }},
      {"model.dim", [](RunConfig& c, const std::string& v) { c.model.dim = to_size(v); }},
      {"model.complementary_dim",
       [](RunConfig& c, const std::string& v) { c.model.complementary_dim = to_size(v); }},
      {"model.depths", [](RunConfig& c, const std::string& v) { c.model.depths = to_sizes<4>(v); }},
      {"model.heads", [](RunConfig& c, const std::string& v) { c.model.heads = to_sizes<4>(v); }},
      {"model.complementary_depths",
       [](RunConfig& c, const std::string& v) { c.model.complementary_depths = to_sizes<4>(v); }},
      {"model.complementary_heads",
       [](RunConfig& c, const std::string& v) { c.model.complementary_heads = to_sizes<4>(v); }},
      {"model.window_size",
       [](RunConfig& c, const std::string& v) { c.model.window_size = to_size(v); }},
      {"model.window_clamp",
       [](RunConfig& c, const std::string& v) { c.model.window_clamp = to_bool(v); }},
      {"model.decoder_depths",
       [](RunConfig& c, const std::string& v) { c.model.decoder_depths = to_sizes<3>(v); }},
      {"model.decoder_heads",
       [](RunConfig& c, const std::string& v) { c.model.decoder_heads = to_sizes<3>(v); }},
      {"model.decoder_dims",
       [](RunConfig& c, const std::string& v) { c.model.decoder_dims = to_sizes<3>(v); }},
      {"model.low_level_dim",
       [](RunConfig& c, const std::string& v) { c.model.low_level_dim = to_size(v); }},
      {"model.tif_merge",
       [](RunConfig& c, const std::string& v) { c.model.tif_merge = to_bool(v); }},
      {"model.s2_source",
       [](RunConfig& c, const std::string& v) {
         if (v == "fused") c.model.s2_source = S2Source::Fused;
         else if (v == "primary") c.model.s2_source = S2Source::Primary;
         else throw ConfigError("model.s2_source must be fused or primary, got '" + v + "'");
       }},
      {"optim.lr", [](RunConfig& c, const std::string& v) { c.optim.lr = to_double(v); }},
      {"optim.momentum",
       [](RunConfig& c, const std::string& v) { c.optim.momentum = to_double(v); }},
      {"optim.weight_decay",
       [](RunConfig& c, const std::string& v) { c.optim.weight_decay = to_double(v); }},
      {"loss.alpha", [](RunConfig& c, const std::string& v) { c.loss.alpha = to_double(v); }},
      {"loss.beta", [](RunConfig& c, const std::string& v) { c.loss.beta = to_double(v); }},
      {"loss.gamma", [](RunConfig& c, const std::string& v) { c.loss.gamma = to_double(v); }},
      {"train.epochs", [](RunConfig& c, const std::string& v) { c.epochs = to_size(v); }},
      {"train.batch_size", [](RunConfig& c, const std::string& v) { c.batch_size = to_size(v); }},
      {"train.early_stop_patience",
       [](RunConfig& c, const std::string& v) { c.early_stop_patience = to_size(v); }},
      {"train.val_fraction",
       [](RunConfig& c, const std::string& v) { c.val_fraction = to_double(v); }},
      {"train.multi_scale_factors",
       [](RunConfig& c, const std::string& v) {
         c.multi_scale_factors.clear();
         for (const auto& item : split_list(v)) c.multi_scale_factors.push_back(to_double(item));
       }},
      {"train.target_mdice",
       [](RunConfig& c, const std::string& v) { c.target_mdice = to_double(v); }},
      {"data.dir", [](RunConfig& c, const std::string& v) { c.data_dir = v; }},
      {"data.synthetic_samples",
       [](RunConfig& c, const std::string& v) { c.synthetic_samples = to_size(v); }},
      {"out.checkpoint", [](RunConfig& c, const std::string& v) { c.checkpoint_path = v; }},
      {"out.log", [](RunConfig& c, const std::string& v) { c.log_path = v; }},
  };
  return table;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& table = setters();
    auto it = table.find(key);
    if (it == table.end())
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    try {
      it->second(config, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + " (" + key + "): " + e.what());
    }
  }
  config.model.seed = config.seed;
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string serialize(const RunConfig& c) {
  std::ostringstream os;
  const ModelConfig& m = c.model;
  os << "seed=" << c.seed << '\n';
  os << "model.mode=" << to_string(m.mode) << '\n';
  os << "model.image_size=" << m.image_size << '\n';
  os << "model.in_channels=" << m.in_channels << '\n';
  os << "model.patch_size=" << m.patch_size << '\n';
  os << "model.complementary_patch_size=" << m.complementary_patch_size << '\n';
  os << "model.dim=" << m.dim << '\n';
  os << "model.complementary_dim=" << m.complementary_dim << '\n';
  os << "model.depths=" << join(m.depths) << '\n';
  os << "model.heads=" << join(m.heads) << '\n';
  os << "model.complementary_depths=" << join(m.complementary_depths) << '\n';
  os << "model.complementary_heads=" << join(m.complementary_heads) << '\n';
  os << "model.window_size=" << m.window_size << '\n';
  os << "model.window_clamp=" << (m.window_clamp ? "true" : "false") << '\n';
  os << "model.decoder_depths=" << join(m.decoder_depths) << '\n';
  os << "model.decoder_heads=" << join(m.decoder_heads) << '\n';
  os << "model.decoder_dims=" << join(m.decoder_dims) << '\n';
  os << "model.low_level_dim=" << m.low_level_dim << '\n';
  os << "model.tif_merge=" << (m.tif_merge ? "true" : "false") << '\n';
  os << "model.s2_source=" << (m.s2_source == S2Source::Fused ? "fused" : "primary") << '\n';
  os << "optim.lr=" << fmt_double(c.optim.lr) << '\n';
  os << "optim.momentum=" << fmt_double(c.optim.momentum) << '\n';
  os << "optim.weight_decay=" << fmt_double(c.optim.weight_decay) << '\n';
  os << "loss.alpha=" << fmt_double(c.loss.alpha) << '\n';
  os << "loss.beta=" << fmt_double(c.loss.beta) << '\n';
  os << "loss.gamma=" << fmt_double(c.loss.gamma) << '\n';
  os << "train.epochs=" << c.epochs << '\n';
  os << "train.batch_size=" << c.batch_size << '\n';
  os << "train.early_stop_patience=" << c.early_stop_patience << '\n';
  os << "train.val_fraction=" << fmt_double(c.val_fraction) << '\n';
  os << "train.multi_scale_factors=";
  for (std::size_t i = 0; i < c.multi_scale_factors.size(); ++i)
    os << (i ? "," : "") << fmt_double(c.multi_scale_factors[i]);
  os << '\n';
  os << "train.target_mdice=" << fmt_double(c.target_mdice) << '\n';
  if (!c.data_dir.empty()) os << "data.dir=" << c.data_dir.string() << '\n';
  os << "data.synthetic_samples=" << c.synthetic_samples << '\n';
  os << "out.checkpoint=" << c.checkpoint_path.string() << '\n';
  os << "out.log=" << c.log_path.string() << '\n';
  return os.str();
}

}  // namespace dstu
