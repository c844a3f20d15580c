#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dstu/rng.hpp"
#include "dstu/tensor.hpp"

namespace dstu {

/// A named trainable tensor. Names are dotted module paths
/// ("encoder.primary.stage1.block0.attn.qkv.weight") and unique per model.
struct Parameter {
  std::string name;
  Tensor tensor;
};

/// Owns every parameter of a model in registration order. Initialization
/// draws from one seeded stream, so construction order fixes the values.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  /// Truncated normal, std 0.02.
  Tensor weight(const std::string& name, Shape shape);
  Tensor zeros(const std::string& name, Shape shape);
  Tensor ones(const std::string& name, Shape shape);

  const std::vector<Parameter>& params() const { return params_; }
  std::vector<Parameter>& params() { return params_; }
  const Parameter* find(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  Tensor add(const std::string& name, Tensor t);

  Rng rng_;
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace dstu
