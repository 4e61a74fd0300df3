#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "ugdd/autograd.hpp"
#include "ugdd/rng.hpp"
#include "ugdd/tensor.hpp"

namespace ugdd {

/// Named trainable tensors in insertion order.
class ParameterStore {
 public:
  ag::Var& add(const std::string& name, Tensor init);
  ag::Var& get(const std::string& name);
  const ag::Var& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t tensor_count() const { return vars_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

  std::vector<ag::Var>& vars() { return vars_; }
  const std::vector<ag::Var>& vars() const { return vars_; }

 private:
  std::vector<std::string> names_;
  std::vector<ag::Var> vars_;
  std::map<std::string, std::size_t> index_;
};

/// Uniform in [-sqrt(1/fan_in), +sqrt(1/fan_in)].
Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng);

}  // namespace ugdd
