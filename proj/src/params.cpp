#include "ugdd/params.hpp"

#include <cmath>

#include "ugdd/errors.hpp"

namespace ugdd {

ag::Var& ParameterStore::add(const std::string& name, Tensor init) {
  if (contains(name)) throw ContractError("duplicate parameter name: " + name);
  index_[name] = vars_.size();
  names_.push_back(name);
  vars_.push_back(ag::parameter(std::move(init)));
  return vars_.back();
}

ag::Var& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return vars_[it->second];
}

const ag::Var& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return vars_[it->second];
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : vars_) n += v.value().size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& v : vars_) v.zero_grad();
}

Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in == 0 ? 1 : fan_in));
  Tensor t(shape);
  for (double& v : t.storage()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace ugdd
