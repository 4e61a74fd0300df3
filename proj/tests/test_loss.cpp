#include <cmath>
#include <vector>

#include "doctest.h"
#include "grad_check.hpp"
#include "ugdd/distance.hpp"
#include "ugdd/errors.hpp"
#include "ugdd/loss.hpp"

using namespace ugdd;
using namespace ugdd::loss;
using ugdd::testing::gradients_agree;
using ugdd::testing::random_tensor;

namespace {

// Two-class probability tensor from a foreground map.
Tensor two_class(const std::vector<double>& fg, std::size_t h, std::size_t w) {
  Tensor p(Shape{1, 2, h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    p[i] = 1.0 - fg[i];
    p[h * w + i] = fg[i];
  }
  return p;
}

Tensor mask(const std::vector<double>& v, std::size_t h, std::size_t w) { return Tensor(Shape{1, 1, h, w}, v); }

double eval(const ag::Var& v) { return v.value().item(); }

Tensor random_probs(Shape s, Rng& rng) {
  ag::NoGradGuard guard;
  return ag::softmax(ag::constant(random_tensor(s, rng, -2.0, 2.0)), 1).value();
}

Tensor random_labels(Shape s, Rng& rng) {
  Tensor y(Shape{s.n, 1, s.h, s.w});
  for (double& v : y.storage()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
  return y;
}

}  // namespace

TEST_CASE("seg loss limits") {
  Tensor y = mask({1, 0, 0, 1}, 2, 2);
  const double perfect = eval(seg_loss(ag::constant(two_class({1, 0, 0, 1}, 2, 2)), y));
  CHECK(perfect == doctest::Approx(-std::log(1.0 + kLogEps)).epsilon(1e-12));
  CHECK(perfect < 1e-7);

  const double ce = eval(cross_entropy(ag::constant(two_class({0.5, 0.5, 0.5, 0.5}, 2, 2)), y));
  CHECK(std::abs(ce - std::log(2.0)) < 1e-7);
}

TEST_CASE("seg loss on a 2x2 pattern") {
  Tensor p = two_class({0.8, 0.2, 0.8, 0.2}, 2, 2);
  Tensor y = mask({1, 0, 0, 1}, 2, 2);
  // true-class probabilities 0.8, 0.8, 0.2, 0.2
  const double ce = -(2 * std::log(0.8 + kLogEps) + 2 * std::log(0.2 + kLogEps)) / 4.0;
  const double dice = 1.0 - (2.0 * 1.0 + 1.0) / (2.0 + 2.0 + 1.0);
  CHECK(eval(cross_entropy(ag::constant(p), y)) == doctest::Approx(ce).epsilon(1e-12));
  CHECK(eval(dice_loss(ag::constant(p), y)) == doctest::Approx(dice).epsilon(1e-12));
  CHECK(eval(seg_loss(ag::constant(p), y)) == doctest::Approx(ce + dice).epsilon(1e-12));
}

TEST_CASE("batch averages per-image terms") {
  Tensor a = two_class({0.9, 0.3, 0.6, 0.1}, 2, 2);
  Tensor b = two_class({0.2, 0.7, 0.4, 0.5}, 2, 2);
  Tensor ya = mask({1, 0, 1, 0}, 2, 2), yb = mask({0, 0, 0, 1}, 2, 2);
  const Tensor pa[] = {a, b};
  const Tensor ys[] = {ya, yb};
  const double batched = eval(seg_loss(ag::constant(stack_batch(pa)), stack_batch(ys)));
  const double separate = (eval(seg_loss(ag::constant(a), ya)) + eval(seg_loss(ag::constant(b), yb))) / 2.0;
  CHECK(batched == doctest::Approx(separate).epsilon(1e-12));
}

TEST_CASE("adaptive margin") {
  CHECK(adaptive_margin(0.0, 0.5) == 0.5);
  CHECK(adaptive_margin(1.0, 0.5) == 0.0);
  CHECK(adaptive_margin(0.4, 0.5) == doctest::Approx(0.3));
  CHECK_THROWS_AS(adaptive_margin(-0.01, 0.5), ContractError);
  CHECK_THROWS_AS(adaptive_margin(1.01, 0.5), ContractError);
  CHECK_THROWS_AS(adaptive_margin(std::nan(""), 0.5), ContractError);
}

TEST_CASE("margin loss single pixel") {
  auto one = [](double p_gt, double u) {
    return eval(margin_loss(ag::constant(two_class({p_gt}, 1, 1)), mask({u}, 1, 1), mask({1}, 1, 1), 0.5));
  };
  CHECK(one(0.9, 0.0) == 0.0);
  CHECK(one(0.55, 0.0) == doctest::Approx(0.4));
  CHECK(one(0.55, 1.0) == 0.0);
  // wrong-leaning prediction still pays the gap at zero margin
  CHECK(one(0.3, 1.0) == doctest::Approx(0.4));
}

TEST_CASE("margin uses the strongest rival class") {
  Tensor p(Shape{1, 3, 1, 1}, {0.5, 0.3, 0.2});
  Tensor y = mask({0}, 1, 1);
  // gap 0.5 - 0.3 = 0.2 against margin 0.5
  CHECK(eval(margin_loss(ag::constant(p), mask({0}, 1, 1), y, 0.5)) == doctest::Approx(0.3));
}

TEST_CASE("margin term is non-increasing in u over a gap grid") {
  for (int gi = 0; gi <= 10; ++gi) {
    const double gap = -1.0 + 0.2 * gi;
    double previous = INFINITY;
    for (int ui = 0; ui <= 10; ++ui) {
      const double u = 0.1 * ui;
      Tensor p = two_class({(1.0 + gap) / 2.0}, 1, 1);
      const double term = eval(margin_loss(ag::constant(p), mask({u}, 1, 1), mask({1}, 1, 1), 0.5));
      CHECK(term == doctest::Approx(std::max(0.0, (1.0 - u) * 0.5 - gap)).epsilon(1e-12));
      CHECK(term >= 0.0);
      CHECK(term <= previous);
      previous = term;
    }
  }
}

TEST_CASE("margin loss is zero iff every pixel satisfies its margin") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor p = random_probs(Shape{1, 2, 3, 3}, rng);
    Tensor y = random_labels(p.shape(), rng);
    Tensor u = random_tensor(y.shape(), rng, 0.0, 1.0);
    bool satisfied = true;
    for (std::size_t i = 0; i < 9; ++i) {
      const double pg = y[i] > 0.5 ? p[9 + i] : p[i];
      satisfied = satisfied && (2 * pg - 1 >= (1 - u[i]) * 0.5);
    }
    const double m = eval(margin_loss(ag::constant(p), u, y, 0.5));
    CHECK(m >= 0.0);
    CHECK((m == 0.0) == satisfied);
  }
}

TEST_CASE("ugml composition") {
  Tensor p = two_class({0.8, 0.2, 0.8, 0.2}, 2, 2);
  Tensor y = mask({1, 0, 0, 1}, 2, 2);
  Tensor u = mask({0.0, 0.5, 1.0, 0.2}, 2, 2);
  LossConfig cfg;
  // gaps 0.6, 0.6, -0.6, -0.6; margins 0.5, 0.25, 0, 0.4
  const double margin = (0.0 + 0.0 + 0.6 + 1.0) / 4.0;
  const double seg = eval(seg_loss(ag::constant(p), y));
  CHECK(eval(ugml(ag::constant(p), u, y, cfg)) == doctest::Approx(seg + 0.1 * margin).epsilon(1e-12));

  cfg.lambda = 0.0;
  CHECK(eval(ugml(ag::constant(p), u, y, cfg)) == seg);

  cfg.lambda = 0.1;
  Tensor ones(u.shape(), 1.0);
  Tensor right = two_class({0.7, 0.4, 0.1, 0.9}, 2, 2);
  CHECK(eval(ugml(ag::constant(right), ones, y, cfg)) == eval(seg_loss(ag::constant(right), y)));
  Tensor px = two_class({0.3}, 1, 1);
  CHECK(eval(ugml(ag::constant(px), mask({1}, 1, 1), mask({1}, 1, 1), cfg)) ==
        doctest::Approx(eval(seg_loss(ag::constant(px), mask({1}, 1, 1))) + 0.1 * 0.4).epsilon(1e-12));
}

TEST_CASE("ugml stays within the margin budget for correct-leaning predictions") {
  Rng rng(12);
  LossConfig cfg;
  for (int trial = 0; trial < 100; ++trial) {
    Tensor y = random_labels(Shape{1, 2, 4, 4}, rng);
    Tensor p(Shape{1, 2, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) {
      const double pg = rng.uniform(0.5, 1.0);
      p[i] = y[i] > 0.5 ? 1 - pg : pg;
      p[16 + i] = 1 - p[i];
    }
    Tensor u = random_tensor(y.shape(), rng, 0.0, 1.0);
    CHECK(eval(ugml(ag::constant(p), u, y, cfg)) <= eval(seg_loss(ag::constant(p), y)) + cfg.lambda * cfg.margin + 1e-12);
  }
}

TEST_CASE("distance transform agrees with brute force") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = 1 + rng.index(12), w = 1 + rng.index(12);
    std::vector<std::uint8_t> sites(h * w);
    for (auto& s : sites) s = rng.uniform() < 0.15;
    const auto d = squared_distance_transform(sites, h, w);
    for (std::size_t i = 0; i < h * w; ++i) {
      double best = INFINITY;
      for (std::size_t j = 0; j < h * w; ++j) {
        if (!sites[j]) continue;
        const double dy = double(i / w) - double(j / w), dx = double(i % w) - double(j % w);
        best = std::min(best, dy * dy + dx * dx);
      }
      CHECK(d[i] == best);
    }
  }
}

TEST_CASE("boundary loss sign convention") {
  Tensor y = mask({0, 0, 0, 0, 1, 0, 0, 0, 0}, 3, 3);
  const double r = std::sqrt(2.0);
  const std::vector<double> hand{r, 1, r, 1, -1, 1, r, 1, r};
  Tensor phi = signed_distance(y);
  for (std::size_t i = 0; i < 9; ++i) CHECK(phi[i] == doctest::Approx(hand[i]).epsilon(1e-14));

  double mean_phi = 0.0;
  for (double v : hand) mean_phi += v / 9.0;
  CHECK(eval(boundary_loss(ag::constant(two_class(std::vector<double>(9, 0.5), 3, 3)), y)) ==
        doctest::Approx(0.5 * mean_phi).epsilon(1e-12));

  Tensor blob(Shape{1, 1, 7, 7});
  for (std::size_t yy = 2; yy < 5; ++yy)
    for (std::size_t xx = 2; xx < 5; ++xx) blob.at(0, 0, yy, xx) = 1.0;
  CHECK(eval(boundary_loss(ag::constant(two_class(blob.storage(), 7, 7)), blob)) < 0.0);

  for (double fill : {0.0, 1.0}) {
    Tensor flat(Shape{1, 1, 3, 3}, fill);
    for (double v : signed_distance(flat).storage()) CHECK(v == 0.0);
  }
}

TEST_CASE("loss errors") {
  auto p = ag::constant(two_class({0.5, 0.5, 0.5, 0.5}, 2, 2));
  CHECK_THROWS_AS(seg_loss(p, mask({1, 0, 1}, 1, 3)), DimensionError);
  CHECK_THROWS_AS(seg_loss(p, mask({1, 0, 2, 0}, 2, 2)), DimensionError);
  CHECK_THROWS_AS(margin_loss(p, mask({0.1, 0.2}, 1, 2), mask({1, 0, 1, 0}, 2, 2), 0.5), DimensionError);
  CHECK_THROWS_AS(margin_loss(p, mask({0.1, 1.2, 0, 0}, 2, 2), mask({1, 0, 1, 0}, 2, 2), 0.5), ContractError);
  CHECK_THROWS_AS(parse_variant("focal"), ConfigError);
  LossConfig bad;
  bad.margin = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = LossConfig{};
  bad.lambda = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  for (auto v : {Variant::Dice, Variant::DiceCE, Variant::DiceCEBoundary, Variant::Ugml})
    CHECK(parse_variant(to_string(v)) == v);
}

TEST_CASE("every loss variant matches finite differences on 4x4 predictions") {
  for (auto variant : {Variant::Dice, Variant::DiceCE, Variant::DiceCEBoundary, Variant::Ugml}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(500 + seed);
      Tensor logits = random_tensor(Shape{1, 2, 4, 4}, rng, -2.0, 2.0);
      Tensor y = random_labels(logits.shape(), rng);
      for (std::size_t i = 0; i < 4; ++i) y[rng.index(16)] = 1.0;
      Tensor u = random_tensor(y.shape(), rng, 0.0, 1.0);
      LossConfig cfg;
      cfg.variant = variant;
      cfg.boundary_weight = 0.1;
      // Differentiate through the softmax so P stays a distribution under probing.
      auto f = [&](const ag::Var& z) { return objective(ag::softmax(z, 1), u, y, cfg); };
      auto z = ag::parameter(logits);
      ag::backward(f(z));
      auto scalar = [&](const Tensor& probe) {
        ag::NoGradGuard guard;
        return eval(f(ag::constant(probe)));
      };
      const Tensor numeric = ag::finite_difference_gradient(scalar, logits, 1e-6);
      INFO(to_string(variant), " seed ", seed);
      CHECK(gradients_agree(z.grad(), numeric, 1e-3));
    }
  }
}
