#include "dstu/params.hpp"

#include <stdexcept>

namespace dstu {

Tensor ParamStore::add(const std::string& name, Tensor t) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  t.set_requires_grad(true);
  index_.emplace(name, params_.size());
  params_.push_back({name, t});
  return t;
}

Tensor ParamStore::weight(const std::string& name, Shape shape) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng_.truncated_normal(0.02);
  return add(name, std::move(t));
}

Tensor ParamStore::zeros(const std::string& name, Shape shape) {
  return add(name, Tensor(std::move(shape), 0.0));
}

Tensor ParamStore::ones(const std::string& name, Shape shape) {
  return add(name, Tensor(std::move(shape), 1.0));
}

const Parameter* ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

}  // namespace dstu
