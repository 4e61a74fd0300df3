#pragma once

// Finite-difference gradient checking shared by the unit and acceptance suites.

#include <cmath>
#include <functional>
#include <vector>

#include "ugdd/autograd.hpp"
#include "ugdd/rng.hpp"

namespace ugdd::testing {

inline Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(s);
  for (double& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

/// ||a - b|| / ||b||, or 0 when both vanish.
inline double relative_error(const Tensor& analytic, const Tensor& numeric) {
  double num = 0.0, den = 0.0, an = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = analytic[i] - numeric[i];
    num += d * d;
    den += numeric[i] * numeric[i];
    an += analytic[i] * analytic[i];
  }
  if (den < 1e-20 && an < 1e-20) return 0.0;
  return std::sqrt(num) / std::sqrt(std::max(den, an));
}

/// Relative agreement, or absolute agreement below `floor` where central
/// differences are dominated by rounding.
inline bool gradients_agree(const Tensor& analytic, const Tensor& numeric, double rel, double floor = 1e-8) {
  double diff = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
  return relative_error(analytic, numeric) < rel || std::sqrt(diff) < floor;
}

using ScalarGraph = std::function<ag::Var(const std::vector<ag::Var>&)>;

/// Worst relative error over every input of `f` between backward() and
/// central differences.
inline double gradient_check(const ScalarGraph& f, const std::vector<Tensor>& inputs, double h = 1e-5) {
  std::vector<ag::Var> vars;
  for (const auto& t : inputs) vars.push_back(ag::parameter(t));
  ag::backward(f(vars));
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto scalar_of = [&](const Tensor& probe) {
      ag::NoGradGuard guard;
      std::vector<ag::Var> args;
      for (std::size_t j = 0; j < inputs.size(); ++j) args.push_back(ag::constant(j == k ? probe : inputs[j]));
      return f(args).value().item();
    };
    const Tensor numeric = ag::finite_difference_gradient(scalar_of, inputs[k], h);
    worst = std::max(worst, relative_error(vars[k].grad(), numeric));
  }
  return worst;
}

/// Fixed random weighting so vector-valued ops reduce to a generic scalar.
inline ag::Var weighted_sum(const ag::Var& v, std::uint64_t seed) {
  Rng rng(seed);
  return ag::sum(ag::mul(v, ag::constant(random_tensor(v.shape(), rng))));
}

}  // namespace ugdd::testing
