// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any selected criterion fails.
//
//   acceptance [--only 1,2,...] [--cli PATH] [--seeds N] [--stage1-epochs N]
//              [--stage2-epochs N] [--size N] [--verbose]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "grad_check.hpp"
#include "ugdd/dataset.hpp"
#include "ugdd/distance.hpp"
#include "ugdd/errors.hpp"
#include "ugdd/fusion.hpp"
#include "ugdd/graph.hpp"
#include "ugdd/loss.hpp"
#include "ugdd/metrics.hpp"
#include "ugdd/report.hpp"
#include "ugdd/trainer.hpp"
#include "ugdd/uncertainty.hpp"
#include "ugdd/wavelet.hpp"

namespace fs = std::filesystem;
using namespace ugdd;
using ugdd::testing::random_tensor;
using ugdd::testing::weighted_sum;
using Clock = std::chrono::steady_clock;

namespace {

struct Options {
  std::set<int> only;
  std::string cli;
  std::size_t seeds = 3;
  std::size_t stage1_epochs = 15;
  std::size_t stage2_epochs = 10;
  std::size_t size = 32;
  bool verbose = false;
};

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---- 1: gradients -------------------------------------------------------------

// Worst relative error of backward() against central differences.
double worst_error(const ugdd::testing::ScalarGraph& f, const std::vector<Tensor>& inputs, double h) {
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
    worst = std::max(worst, ugdd::testing::relative_error(vars[k].grad(), numeric));
  }
  return worst;
}

// Values bounded away from 0 so kinks at 0 are never crossed by the probe.
Tensor away_from_zero(Shape s, Rng& rng, double gap = 0.1) {
  Tensor t(s);
  for (double& v : t.storage()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(gap, 1.0);
  return t;
}

struct GradCase {
  std::string name;
  double tol;
  std::function<std::vector<Tensor>(Rng&)> inputs;
  ugdd::testing::ScalarGraph f;
  double h = 1e-5;
};

std::vector<GradCase> tensor_cases() {
  auto u = [](Shape s) { return [s](Rng& r) { return std::vector<Tensor>{random_tensor(s, r)}; }; };
  auto uu = [](Shape a, Shape b) {
    return [a, b](Rng& r) { return std::vector<Tensor>{random_tensor(a, r), random_tensor(b, r)}; };
  };
  const Shape s{2, 3, 4, 4};
  using V = std::vector<ag::Var>;
  std::vector<GradCase> c;
  c.push_back({"add", 1e-4, uu(s, s), [](const V& v) { return weighted_sum(ag::add(v[0], v[1]), 1); }});
  c.push_back({"add broadcast", 1e-4, uu(s, Shape{1, 1, 4, 4}),
               [](const V& v) { return weighted_sum(ag::add(v[0], v[1]), 2); }});
  c.push_back({"sub", 1e-4, uu(s, Shape{2, 3, 1, 1}), [](const V& v) { return weighted_sum(ag::sub(v[0], v[1]), 3); }});
  c.push_back({"mul", 1e-4, uu(s, Shape{1, 3, 4, 4}), [](const V& v) { return weighted_sum(ag::mul(v[0], v[1]), 4); }});
  c.push_back({"div", 1e-4,
               [s](Rng& r) { return std::vector<Tensor>{random_tensor(s, r), random_tensor(s, r, 0.5, 1.5)}; },
               [](const V& v) { return weighted_sum(ag::div(v[0], v[1]), 5); }});
  c.push_back({"exp", 1e-4, u(s), [](const V& v) { return weighted_sum(ag::exp(v[0]), 6); }});
  c.push_back({"log", 1e-4, [s](Rng& r) { return std::vector<Tensor>{random_tensor(s, r, 0.5, 2.0)}; },
               [](const V& v) { return weighted_sum(ag::log(v[0]), 7); }});
  c.push_back({"log stabilized", 1e-4, [s](Rng& r) { return std::vector<Tensor>{random_tensor(s, r, 0.1, 1.0)}; },
               [](const V& v) { return weighted_sum(ag::log(v[0], 1e-8), 8); }});
  c.push_back({"relu", 1e-4, [s](Rng& r) { return std::vector<Tensor>{away_from_zero(s, r)}; },
               [](const V& v) { return weighted_sum(ag::relu(v[0]), 9); }});
  c.push_back({"max_scalar", 1e-4, [s](Rng& r) { return std::vector<Tensor>{away_from_zero(s, r)}; },
               [](const V& v) { return weighted_sum(ag::max_scalar(v[0], 0.0), 10); }});
  c.push_back({"scale", 1e-4, u(s), [](const V& v) { return weighted_sum(ag::scale(v[0], -2.5), 11); }});
  c.push_back({"add_scalar", 1e-4, u(s), [](const V& v) { return weighted_sum(ag::add_scalar(v[0], 0.7), 12); }});
  c.push_back({"one_minus", 1e-4, u(s), [](const V& v) { return weighted_sum(ag::one_minus(v[0]), 13); }});
  c.push_back({"clamp", 1e-4,
               [s](Rng& r) {
                 Tensor t = away_from_zero(s, r, 0.05);
                 for (double& x : t.storage())
                   if (std::abs(std::abs(x) - 0.5) < 0.05) x *= 0.8;
                 return std::vector<Tensor>{t};
               },
               [](const V& v) { return weighted_sum(ag::clamp(v[0], -0.5, 0.5), 14); }});
  c.push_back({"sum", 1e-4, u(s), [](const V& v) { return ag::sum(ag::mul(v[0], v[0])); }});
  c.push_back({"mean", 1e-4, u(s), [](const V& v) { return ag::mean(ag::mul(v[0], v[0])); }});
  c.push_back({"sum_axes", 1e-4, u(s),
               [](const V& v) { return weighted_sum(ag::sum_axes(v[0], {false, true, false, true}), 15); }});
  c.push_back({"reshape", 1e-4, u(s),
               [](const V& v) { return weighted_sum(ag::reshape(v[0], Shape{1, 1, 6, 16}), 16); }});
  c.push_back({"permute", 1e-4, u(s), [](const V& v) { return weighted_sum(ag::permute(v[0], {3, 1, 0, 2}), 17); }});
  c.push_back({"transpose_last", 1e-4, u(Shape{1, 2, 3, 5}),
               [](const V& v) { return weighted_sum(ag::transpose_last(v[0]), 18); }});
  c.push_back({"narrow", 1e-4, u(s), [](const V& v) { return weighted_sum(ag::narrow(v[0], 2, 1, 2), 19); }});
  c.push_back({"concat", 1e-4, uu(s, Shape{2, 2, 4, 4}),
               [](const V& v) {
                 std::vector<ag::Var> parts{v[0], v[1]};
                 return weighted_sum(ag::concat(parts, 1), 20);
               }});
  c.push_back({"flip", 1e-4, u(s), [](const V& v) { return weighted_sum(ag::flip(v[0], 3), 21); }});
  c.push_back({"matmul", 1e-4, uu(Shape{2, 1, 3, 4}, Shape{1, 1, 4, 5}),
               [](const V& v) { return weighted_sum(ag::matmul(v[0], v[1]), 22); }});
  c.push_back({"conv2d", 1e-4,
               [](Rng& r) {
                 return std::vector<Tensor>{random_tensor(Shape{1, 2, 5, 5}, r), random_tensor(Shape{3, 2, 3, 3}, r),
                                            random_tensor(Shape{1, 3, 1, 1}, r)};
               },
               [](const V& v) { return weighted_sum(ag::conv2d(v[0], v[1], v[2], {1, 1}), 23); }});
  c.push_back({"conv2d stride 2", 1e-4,
               [](Rng& r) {
                 return std::vector<Tensor>{random_tensor(Shape{1, 2, 6, 6}, r), random_tensor(Shape{2, 2, 3, 3}, r),
                                            random_tensor(Shape{1, 2, 1, 1}, r)};
               },
               [](const V& v) { return weighted_sum(ag::conv2d(v[0], v[1], v[2], {2, 1}), 24); }});
  c.push_back({"conv_transpose2d", 1e-4,
               [](Rng& r) {
                 return std::vector<Tensor>{random_tensor(Shape{1, 3, 3, 3}, r), random_tensor(Shape{3, 2, 2, 2}, r),
                                            random_tensor(Shape{1, 2, 1, 1}, r)};
               },
               [](const V& v) { return weighted_sum(ag::conv_transpose2d(v[0], v[1], v[2], {2, 0}), 25); }});
  c.push_back({"maxpool2d", 1e-4, u(s), [](const V& v) { return weighted_sum(ag::maxpool2d(v[0], 2), 26); }});
  c.push_back({"softmax", 1e-3, u(s), [](const V& v) { return weighted_sum(ag::softmax(v[0], 1), 27); }});
  c.push_back({"bilinear_sample", 1e-4,
               [](Rng& r) {
                 Tensor off(Shape{1, 2, 4, 4});
                 // Keep sample positions off the integer grid, where the kernel has kinks.
                 for (double& x : off.storage()) x = (r.uniform() < 0.5 ? -1.0 : 0.0) + r.uniform(0.2, 0.8);
                 return std::vector<Tensor>{random_tensor(Shape{1, 2, 4, 4}, r), off};
               },
               [](const V& v) { return weighted_sum(ag::bilinear_sample(v[0], v[1]), 28); }});
  c.push_back({"gather_rows", 1e-4, u(Shape{1, 1, 6, 3}),
               [](const V& v) {
                 const std::vector<std::size_t> idx{4, 0, 4, 2};
                 return weighted_sum(ag::gather_rows(v[0], idx), 29);
               }});
  c.push_back({"scatter_rows", 1e-4, u(Shape{1, 1, 4, 3}),
               [](const V& v) {
                 const std::vector<std::size_t> idx{5, 1, 5, 0};
                 return weighted_sum(ag::scatter_rows(v[0], idx, 6), 30);
               }});
  c.push_back({"relative_position_bias", 1e-4, u(Shape{1, 1, 7, 7}),
               [](const V& v) { return weighted_sum(ag::relative_position_bias(v[0], 3, 4), 31); }});
  return c;
}

GradCase fusion_case() {
  return {"UGBFF stack 4x4", 1e-3,
          [](Rng& rng) {
            const std::size_t c = 2;
            return std::vector<Tensor>{random_tensor(Shape{1, c, 4, 4}, rng),
                                       random_tensor(Shape{1, c, 4, 4}, rng),
                                       random_tensor(Shape{1, 1, 4, 4}, rng, 0.05, 0.95),
                                       random_tensor(Shape{1, 1, 4, 4}, rng, 0.05, 0.95),
                                       random_tensor(Shape{1, 1, c, c}, rng),
                                       random_tensor(Shape{1, 1, c, c}, rng),
                                       random_tensor(Shape{1, 1, c, c}, rng),
                                       random_tensor(Shape{2, 2 * c, 3, 3}, rng, -0.2, 0.2),
                                       random_tensor(Shape{1, 2, 1, 1}, rng, -0.2, 0.2),
                                       random_tensor(Shape{1, 1, 7, 7}, rng)};
          },
          [](const std::vector<ag::Var>& v) {
            fusion::DirectionParams p{v[4], v[5], v[6], v[7], v[8], v[9]};
            fusion::FusionSiteParams site{2, p, p};
            auto [s, f] = fusion::ugbff_fuse(v[0], v[1], v[2], v[3], site);
            return ag::add(weighted_sum(s, 7), weighted_sum(f, 8));
          },
          1e-6};
}

// Two-node graph: one uncertain query pixel and one reliable reference.
double uggr_case(std::uint64_t seed) {
  Rng rng(700 + seed);
  const std::size_t n = 4, d = 4;
  graph::RefineInputs base;
  base.u_s = random_tensor(Shape{1, 1, n, n}, rng, 0.0, 1.0);
  base.u_f = random_tensor(Shape{1, 1, n, n}, rng, 0.0, 1.0);
  base.r_s = Tensor(Shape{1, 1, n, n});
  base.r_f = Tensor(Shape{1, 1, n, n});
  base.r_s.at(0, 0, 0, 0) = 1.0;
  base.r_s.at(0, 0, 3, 3) = 1.0;
  base.r_f.at(0, 0, 3, 3) = 1.0;
  auto probs = [&] {
    Tensor p(Shape{1, 2, n, n});
    for (std::size_t i = 0; i < n * n; ++i) {
      p[n * n + i] = rng.uniform();
      p[i] = 1.0 - p[n * n + i];
    }
    return p;
  };
  std::vector<Tensor> inputs{random_tensor(Shape{1, 1, n, n}, rng), random_tensor(Shape{1, 1, n, n}, rng), probs(),
                             probs()};
  for (int i = 0; i < 8; ++i) inputs.push_back(random_tensor(Shape{1, 1, d, d}, rng));
  inputs.push_back(random_tensor(Shape{2, d, 1, 1}, rng));
  inputs.push_back(random_tensor(Shape{1, 2, 1, 1}, rng));
  graph::GraphConfig cfg;
  cfg.num_nodes = 2;
  cfg.num_queries = 1;
  return worst_error(
      [&](const std::vector<ag::Var>& v) {
        graph::RefineInputs in = base;
        in.feat_s = v[0];
        in.feat_f = v[1];
        in.p_s = v[2];
        in.p_f = v[3];
        graph::UggrParams p{d, v[4], v[5], v[6], v[7], v[8], v[9], v[10], v[11], v[12], v[13]};
        auto out = graph::refine(in, p, cfg);
        if (out.nodes.size() != 2) throw ContractError("expected a two-node graph");
        return weighted_sum(out.p_final, 9);
      },
      inputs, 1e-6);
}

double loss_case(loss::Variant variant, std::uint64_t seed) {
  Rng rng(500 + seed);
  Tensor logits = random_tensor(Shape{1, 2, 4, 4}, rng, -2.0, 2.0);
  Tensor y(Shape{1, 1, 4, 4});
  for (double& v : y.storage()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
  Tensor u = random_tensor(y.shape(), rng, 0.0, 1.0);
  loss::LossConfig cfg;
  cfg.variant = variant;
  cfg.boundary_weight = 0.1;
  return worst_error(
      [&](const std::vector<ag::Var>& v) { return loss::objective(ag::softmax(v[0], 1), u, y, cfg); }, {logits},
      1e-6);
}

Outcome criterion_gradients(const Options& opt) {
  const auto t0 = Clock::now();
  Outcome out;
  std::ostringstream detail;
  std::size_t cases = 0;
  double worst_plain = 0.0, worst_soft = 0.0;
  auto record = [&](const std::string& name, double tol, double err) {
    ++cases;
    (tol < 1e-3 ? worst_plain : worst_soft) = std::max(tol < 1e-3 ? worst_plain : worst_soft, err);
    if (!(err < tol)) {
      out.pass = false;
      detail << " " << name << " err " << err << ";";
    }
  };
  for (const auto& c : tensor_cases()) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed * 7919 + 1);
      record(c.name, c.tol, worst_error(c.f, c.inputs(rng), c.h));
    }
  }
  const auto fc = fusion_case();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(500 + seed);
    record(fc.name, fc.tol, worst_error(fc.f, fc.inputs(rng), fc.h));
  }
  for (std::uint64_t seed = 0; seed < 20; ++seed) record("UGGR two-node", 1e-3, uggr_case(seed));
  for (auto v : {loss::Variant::Dice, loss::Variant::DiceCE, loss::Variant::DiceCEBoundary, loss::Variant::Ugml})
    for (std::uint64_t seed = 0; seed < 20; ++seed) record("loss " + loss::to_string(v), 1e-3, loss_case(v, seed));
  const double secs = seconds_since(t0);
  if (secs >= 120.0) {
    out.pass = false;
    detail << " runtime " << secs << " s >= 120 s;";
  }
  out.detail = std::to_string(cases) + " cases, worst rel err " + fmt("%.2e", worst_plain) + " (tol 1e-4), " +
               fmt("%.2e", worst_soft) + " (tol 1e-3, softmax/attention), " + fmt("%.1f", secs) + " s" +
               detail.str();
  (void)opt;
  return out;
}

// ---- 2: wavelet -------------------------------------------------------------

Outcome criterion_wavelet(const Options&) {
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst_pr = 0.0, worst_energy = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Tensor x = random_tensor(Shape{1, 1, 64, 64}, rng, 0.0, 1.0);
    const auto bands = wavelet::dwt2(x);
    worst_pr = std::max(worst_pr, max_abs_diff(wavelet::idwt2(bands), x));
    double ex = 0.0;
    for (double v : x.storage()) ex += v * v;
    double eb = 0.0;
    for (const Tensor* b : {&bands.ll, &bands.lh, &bands.hl, &bands.hh})
      for (double v : b->storage()) eb += v * v;
    worst_energy = std::max(worst_energy, std::abs(ex - eb));
  }
  const double secs = seconds_since(t0);
  Outcome out;
  out.pass = worst_pr < 1e-6 && worst_energy < 1e-5 && secs < 10.0;
  out.detail = "100 images 64x64, max |idwt(dwt(x)) - x| " + fmt("%.2e", worst_pr) + ", max energy gap " +
               fmt("%.2e", worst_energy) + ", " + fmt("%.2f", secs) + " s";
  return out;
}

// ---- 3: uncertainty -----------------------------------------------------------

Tensor two_class_map(const std::vector<double>& fg) {
  Tensor p(Shape{1, 2, 1, fg.size()});
  for (std::size_t i = 0; i < fg.size(); ++i) {
    p[i] = 1.0 - fg[i];
    p[fg.size() + i] = fg[i];
  }
  return p;
}

Outcome criterion_uncertainty(const Options&) {
  const double half = uncertainty::entropy_map(two_class_map({0.5}))[0];
  const Tensor hot = uncertainty::entropy_map(two_class_map({0.0, 1.0}));
  const double one_hot = std::max(hot[0], hot[1]);
  std::vector<double> sweep;
  for (int i = 0; i <= 100; ++i) sweep.push_back(i / 100.0);
  const Tensor u = uncertainty::entropy_map(two_class_map(sweep));
  // Order the sweep by distance from 0.5; u must fall strictly as the distance grows.
  bool monotone = true, symmetric = true;
  for (int i = 0; i < 50; ++i) {
    symmetric = symmetric && std::abs(u[i] - u[100 - i]) < 1e-12;
    monotone = monotone && u[i + 1] > u[i] && u[99 - i] > u[100 - i];
  }
  Outcome out;
  out.pass = std::abs(half - 1.0) <= 1e-6 && one_hot <= 1e-7 && monotone && symmetric;
  out.detail = "u(0.5,0.5) = " + fmt("%.9f", half) + ", one-hot max " + fmt("%.2e", one_hot) +
               ", 101-point sweep monotone " + (monotone ? "yes" : "no") + ", symmetric " + (symmetric ? "yes" : "no");
  return out;
}

// ---- 4: loss --------------------------------------------------------------------

Outcome criterion_loss(const Options&) {
  const double xi0 = loss::adaptive_margin(0.0, 0.5), xi1 = loss::adaptive_margin(1.0, 0.5);
  bool grid_ok = true;
  for (int gi = 0; gi <= 10; ++gi) {
    const double gap = -1.0 + 0.2 * gi;
    double previous = INFINITY;
    for (int ui = 0; ui <= 10; ++ui) {
      const double u = 0.1 * ui;
      Tensor p(Shape{1, 2, 1, 1}, {(1.0 - gap) / 2.0, (1.0 + gap) / 2.0});
      const double term =
          loss::margin_loss(ag::constant(p), Tensor(Shape{1, 1, 1, 1}, u), Tensor(Shape{1, 1, 1, 1}, 1.0), 0.5)
              .value()
              .item();
      grid_ok = grid_ok && term <= previous && term >= 0.0;
      previous = term;
    }
  }
  bool exact = true;
  Rng rng(44);
  for (int t = 0; t < 50; ++t) {
    ag::NoGradGuard guard;
    Tensor p = ag::softmax(ag::constant(random_tensor(Shape{2, 2, 8, 8}, rng, -3, 3)), 1).value();
    Tensor y(Shape{2, 1, 8, 8}), u = random_tensor(Shape{2, 1, 8, 8}, rng, 0.0, 1.0);
    for (double& v : y.storage()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
    loss::LossConfig cfg;
    cfg.lambda = 0.0;
    const double a = loss::ugml(ag::constant(p), u, y, cfg).value().item();
    const double b = loss::seg_loss(ag::constant(p), y).value().item();
    exact = exact && a == b;
  }
  Outcome out;
  out.pass = xi0 == 0.5 && xi1 == 0.0 && grid_ok && exact;
  out.detail = "xi(0) = " + fmt("%.6g", xi0) + ", xi(1) = " + fmt("%.6g", xi1) + ", 11x11 grid non-increasing " +
               (grid_ok ? "yes" : "no") + ", lambda=0 bit-exact over 50 draws " + (exact ? "yes" : "no");
  return out;
}

// ---- 5: graph structure ---------------------------------------------------------

Tensor random_blob_mask(std::size_t n, Rng& rng) {
  Tensor m(Shape{1, 1, n, n});
  if (rng.uniform() < 0.5) {
    const double p = rng.uniform(0.05, 0.6);
    for (double& v : m.storage()) v = rng.uniform() < p ? 1.0 : 0.0;
  } else {
    const double cy = rng.uniform(4, n - 4.0), cx = rng.uniform(4, n - 4.0), r = rng.uniform(2, n / 3.0);
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x)
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) m.at(0, 0, y, x) = 1.0;
  }
  return m;
}

Outcome criterion_graph(const Options&) {
  Rng rng(55);
  const std::size_t n = 32;
  graph::GraphConfig cfg;
  std::size_t partition_bad = 0, count_bad = 0, nondegenerate = 0;
  for (int t = 0; t < 1000; ++t) {
    const Tensor s = random_blob_mask(n, rng), f = random_blob_mask(n, rng);
    const auto roi = graph::compute_roi(s, f);
    const auto part = graph::partition(s, f, roi);
    for (std::size_t i = 0; i < n * n; ++i) {
      const int members = part.rel[i] + part.unc[i] + part.ctx[i];
      const bool inside = roi.contains(i / n, i % n);
      if (members != (inside ? 1 : 0)) {
        ++partition_bad;
        break;
      }
      const bool a = s[i] > 0.5, b = f[i] > 0.5;
      if (inside && ((a && b) != (part.rel[i] == 1) || (a != b) != (part.unc[i] == 1))) {
        ++partition_bad;
        break;
      }
    }
    if (roi.empty()) continue;
    ++nondegenerate;
    const Tensor u = random_tensor(Shape{1, 1, n, n}, rng, 0.0, 1.0);
    const auto nodes = graph::sample_nodes(part, u, cfg);
    if (nodes.size() != 512 || nodes.num_queries != 256) ++count_bad;
  }

  // Equal logits: a zero query projection makes every score 0 before the bias.
  graph::UggrParams p;
  p.dim = 3;
  p.att_q = ag::constant(Tensor(Shape{1, 1, 3, 3}));
  p.att_k = ag::constant(random_tensor(Shape{1, 1, 3, 3}, rng));
  p.att_v = ag::constant(random_tensor(Shape{1, 1, 3, 3}, rng));
  const auto xq = ag::constant(random_tensor(Shape{1, 1, 5, 3}, rng));
  const auto xkv = ag::constant(random_tensor(Shape{1, 1, 6, 3}, rng));
  const std::vector<bool> reliable{true, false, false, true, false, true};
  const auto att = graph::priority_cross_attention(xq, xkv, reliable, p, 1.0);
  double worst_ratio = 0.0;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t r : {0, 3, 5})
      for (std::size_t c : {1, 2, 4})
        worst_ratio = std::max(worst_ratio,
                               std::abs(att.weights.value().at(0, 0, i, r) / att.weights.value().at(0, 0, i, c) -
                                        std::exp(1.0)));
  Outcome out;
  out.pass = partition_bad == 0 && count_bad == 0 && worst_ratio <= 1e-6;
  out.detail = "1000 mask pairs: partition violations " + std::to_string(partition_bad) + "; " +
               std::to_string(nondegenerate) + " non-degenerate, node-count violations " + std::to_string(count_bad) +
               "; |ratio - e| " + fmt("%.2e", worst_ratio);
  return out;
}

// ---- 6: glance/gaze and curriculum ----------------------------------------------

Outcome criterion_glance_gaze(const Options&) {
  ModelConfig mc;
  mc.backbone.levels = 2;
  mc.backbone.base_channels = 4;
  mc.backbone.height = mc.backbone.width = 16;
  mc.backbone.fusion_sites = "all";
  mc.graph.num_nodes = 64;
  mc.graph.num_queries = 32;
  bool exact = true, ran_graph = true;
  synth::SynthConfig sc;
  sc.size = 16;
  sc.count = 5;
  const auto samples = synth::generate(sc);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Model m(mc, seed);
    // Non-zero value projections so the sites would change features if not bypassed.
    Rng rng(seed + 1);
    for (std::size_t i = 0; i < m.params().tensor_count(); ++i)
      if (m.params().names()[i].find(".wv") != std::string::npos)
        for (double& w : m.params().vars()[i].mutable_value().storage()) w = rng.uniform(-0.5, 0.5);
    const Tensor& x = samples[seed].image;
    ag::NoGradGuard guard;
    const auto plain = m.network().forward(x, nullptr, nullptr, false);
    auto g = train::glance_pass(m, x);
    g.u_s.fill(0.0);
    g.u_f.fill(0.0);
    const auto gaze = train::gaze_pass(m, x, g);
    exact = exact && max_abs_diff(gaze.p_s.value(), plain.p_s.value()) == 0.0 &&
                    max_abs_diff(gaze.p_f.value(), plain.p_f.value()) == 0.0;
    if (g.r_s.max() > 0 || g.r_f.max() > 0) ran_graph = ran_graph && gaze.refined;
  }

  train::CurriculumController flat(train::StageMode::Auto, 20, 1e-4);
  int moved = 0;
  for (int e = 1; e <= 60 && !moved; ++e)
    if (flat.update(0.5)) moved = e;
  // An improvement at epoch 15 restarts the count.
  train::CurriculumController reset(train::StageMode::Auto, 20, 1e-4);
  int moved_reset = 0;
  for (int e = 1; e <= 80 && !moved_reset; ++e)
    if (reset.update(e == 15 ? 0.4 : 0.5)) moved_reset = e;

  Outcome out;
  out.pass = exact && ran_graph && moved == 21 && moved_reset == 35;
  out.detail = std::string("U=0 gaze branches bit-exact ") + (exact ? "yes" : "no") + ", refinement still runs " +
               (ran_graph ? "yes" : "no") + "; flat losses switch at epoch " + std::to_string(moved) +
               ", improvement at 15 defers to " + std::to_string(moved_reset);
  return out;
}

// ---- 7: metric oracles ----------------------------------------------------------

struct Mask {
  std::size_t n = 0;
  std::vector<int> v;
  int at(long y, long x) const {
    if (y < 0 || x < 0 || y >= long(n) || x >= long(n)) return 0;
    return v[y * n + x];
  }
};

std::vector<std::pair<int, int>> oracle_boundary(const Mask& m) {
  std::vector<std::pair<int, int>> out;
  for (long y = 0; y < long(m.n); ++y)
    for (long x = 0; x < long(m.n); ++x)
      if (m.at(y, x) && (!m.at(y - 1, x) || !m.at(y + 1, x) || !m.at(y, x - 1) || !m.at(y, x + 1)))
        out.push_back({int(y), int(x)});
  return out;
}

double oracle_percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * double(v.size() - 1);
  const std::size_t lo = std::size_t(std::floor(pos)), hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
}

Outcome criterion_metrics(const Options&) {
  Rng rng(77);
  const std::size_t n = 32;
  double e_iou = 0, e_dice = 0, e_hd = 0, e_assd = 0, e_ece = 0;
  bool identity = true;
  for (int t = 0; t < 50; ++t) {
    const Tensor a = random_blob_mask(n, rng), b = random_blob_mask(n, rng);
    Mask ma{n, {}}, mb{n, {}};
    for (std::size_t i = 0; i < n * n; ++i) {
      ma.v.push_back(a[i] > 0.5);
      mb.v.push_back(b[i] > 0.5);
    }
    if (std::count(ma.v.begin(), ma.v.end(), 1) == 0 || std::count(mb.v.begin(), mb.v.end(), 1) == 0) {
      --t;
      continue;
    }
    const auto pa = BinaryMask::from_tensor(a), pb = BinaryMask::from_tensor(b);

    const auto ov = metrics::iou_dice(pa, pb);
    double inter = 0, uni = 0, sa = 0, sb = 0;
    for (std::size_t i = 0; i < n * n; ++i) {
      inter += ma.v[i] && mb.v[i];
      uni += ma.v[i] || mb.v[i];
      sa += ma.v[i];
      sb += mb.v[i];
    }
    e_iou = std::max(e_iou, std::abs(ov.iou - inter / uni));
    e_dice = std::max(e_dice, std::abs(ov.dice - 2 * inter / (sa + sb)));
    identity = identity && ov.dice == 2 * ov.iou / (1 + ov.iou);

    const auto ba = oracle_boundary(ma), bb = oracle_boundary(mb);
    std::vector<double> pooled;
    auto directed = [&](const auto& from, const auto& to) {
      for (auto [y, x] : from) {
        double best = INFINITY;
        for (auto [v, w] : to) best = std::min(best, std::hypot(double(y - v), double(x - w)));
        pooled.push_back(best);
      }
    };
    directed(ba, bb);
    directed(bb, ba);
    double mean = 0;
    for (double d : pooled) mean += d;
    mean /= double(pooled.size());
    const auto sd = metrics::surface_distances(pa, pb);
    e_hd = std::max(e_hd, std::abs(sd.hd95 - oracle_percentile(pooled, 95.0)));
    e_assd = std::max(e_assd, std::abs(sd.assd - mean));

    // ECE: 15 equal bins of confidence over [0.5, 1].
    std::vector<double> prob(n * n);
    for (double& p : prob) p = rng.uniform();
    std::vector<double> conf(15, 0.0), correct(15, 0.0), count(15, 0.0);
    for (std::size_t i = 0; i < n * n; ++i) {
      const double c = std::max(prob[i], 1 - prob[i]);
      const std::size_t k = std::min<std::size_t>(14, std::size_t((c - 0.5) / (0.5 / 15)));
      conf[k] += c;
      correct[k] += (prob[i] > 0.5) == (mb.v[i] == 1);
      count[k] += 1;
    }
    double ece = 0;
    for (std::size_t k = 0; k < 15; ++k)
      if (count[k] > 0) ece += count[k] / double(n * n) * std::abs(correct[k] / count[k] - conf[k] / count[k]);
    e_ece = std::max(e_ece, std::abs(metrics::ece(prob, pb, 15).ece - ece));
  }
  Outcome out;
  out.pass = e_iou < 1e-6 && e_dice < 1e-6 && e_hd < 1e-3 && e_assd < 1e-6 && e_ece < 1e-6 && identity;
  out.detail = "50 pairs 32x32, max |diff| iou " + fmt("%.1e", e_iou) + " dice " + fmt("%.1e", e_dice) + " hd95 " +
               fmt("%.1e", e_hd) + " assd " + fmt("%.1e", e_assd) + " ece " + fmt("%.1e", e_ece) +
               ", dice identity exact " + (identity ? "yes" : "no");
  return out;
}

// ---- 8: directional ablation ----------------------------------------------------

void copy_matching(const Model& from, Model& to) {
  for (std::size_t i = 0; i < to.params().tensor_count(); ++i) {
    const auto& name = to.params().names()[i];
    if (from.params().contains(name))
      to.params().vars()[i].mutable_value() = from.params().get(name).value();
  }
}

struct VariantScore {
  double hard_iou = 0.0;
  double ece = 0.0;
  double mean_iou = 0.0;
};

struct AblationRow {
  VariantScore ss, sf, m3, sf_dicece;
  double probe_mean = 0.0;
  std::size_t hard_count = 0;
};

// Longest single train() call so far, in seconds.
double longest_run = 0.0;

AblationRow ablation_seed(const Options& opt, std::uint64_t seed) {
  const auto t_seed = Clock::now();
  synth::SynthConfig sc;
  sc.size = opt.size;
  sc.count = 500;
  sc.seed = 9000 + seed;
  const auto all = synth::generate(sc);
  const std::vector<synth::Sample> pool(all.begin(), all.begin() + 400), test(all.begin() + 400, all.end());
  const auto parts = data::split(pool.size(), {0.8, 0.2, 0.0}, seed);
  const auto train_set = data::select(pool, parts.train), val_set = data::select(pool, parts.val);

  ModelConfig base;
  base.backbone.height = base.backbone.width = opt.size;
  base.backbone.fusion_sites = "coarse";
  train::TrainConfig tc;
  tc.seed = seed;
  tc.batch_size = 4;

  auto log = [&](const std::string& what, const train::TrainResult& r, Clock::time_point t0) {
    if (!opt.verbose) return;
    const auto& last = r.log.back();
    std::fprintf(stderr, "  seed %llu %-22s epochs %zu  train %.4f  val %.4f  val-iou %.4f  val-ece %.4f  %.0f s\n",
                 static_cast<unsigned long long>(seed), what.c_str(), r.log.size(), last.train_loss, last.val_loss,
                 last.val_iou, last.val_ece, seconds_since(t0));
  };
  auto run = [&](Model& m, train::StageMode stage, std::size_t epochs, loss::Variant v, const std::string& what) {
    train::TrainConfig c = tc;
    c.stage = stage;
    c.epochs = epochs;
    loss::LossConfig lc;
    lc.variant = v;
    const auto t0 = Clock::now();
    const auto r = train::train(m, train_set, val_set, c, lc);
    longest_run = std::max(longest_run, seconds_since(t0));
    log(what, r, t0);
  };

  // Probe: single spatial branch, used only to pick the hard samples.
  ModelConfig probe_cfg = base;
  probe_cfg.backbone.dd_mode = DdMode::SingleS;
  Model probe(probe_cfg, seed);
  run(probe, train::StageMode::One, opt.stage1_epochs + opt.stage2_epochs, loss::Variant::DiceCE, "probe single-S");
  const auto probe_eval = train::evaluate(probe, test);
  std::vector<double> probe_iou;
  for (const auto& m : probe_eval.per_sample) probe_iou.push_back(m.iou);
  AblationRow row;
  row.probe_mean = metrics::summarize(probe_iou).mean;
  const auto hard = metrics::hard_sample_filter(probe_iou, row.probe_mean);
  row.hard_count = hard.size();

  auto score = [&](const Model& m) {
    const auto ev = train::evaluate(m, test);
    VariantScore s;
    std::vector<double> h, all_iou;
    for (auto i : hard) h.push_back(ev.per_sample[i].iou);
    for (const auto& p : ev.per_sample) all_iou.push_back(p.iou);
    s.hard_iou = metrics::summarize(h).mean;
    s.mean_iou = metrics::summarize(all_iou).mean;
    s.ece = ev.calibration.ece;
    return s;
  };

  // S&S full model.
  ModelConfig ss_cfg = base;
  ss_cfg.backbone.dd_mode = DdMode::SS;
  Model ss(ss_cfg, seed);
  run(ss, train::StageMode::One, opt.stage1_epochs, loss::Variant::Ugml, "S&S stage 1");
  run(ss, train::StageMode::Two, opt.stage2_epochs, loss::Variant::Ugml, "S&S full stage 2");
  row.ss = score(ss);

  // S&F: one shared stage 1, forked into three stage-2 variants.
  Model sf1(base, seed);
  run(sf1, train::StageMode::One, opt.stage1_epochs, loss::Variant::Ugml, "S&F stage 1");

  Model sf(base, seed);
  copy_matching(sf1, sf);
  run(sf, train::StageMode::Two, opt.stage2_epochs, loss::Variant::Ugml, "S&F full stage 2");
  row.sf = score(sf);

  Model sfd(base, seed);
  copy_matching(sf1, sfd);
  run(sfd, train::StageMode::Two, opt.stage2_epochs, loss::Variant::DiceCE, "S&F dice+ce stage 2");
  row.sf_dicece = score(sfd);

  ModelConfig m3_cfg = base;
  m3_cfg.backbone.ugbff = false;
  m3_cfg.uggr = false;
  Model m3(m3_cfg, seed);
  copy_matching(sf1, m3);
  run(m3, train::StageMode::Two, opt.stage2_epochs, loss::Variant::DiceCE, "Model-3 stage 2");
  row.m3 = score(m3);

  if (opt.verbose)
    std::fprintf(stderr,
                 "  seed %llu: probe mean %.4f, hard %zu | hard IoU S&S %.4f S&F %.4f M3 %.4f S&F-dice+ce %.4f | ECE "
                 "ugml %.4f dice+ce %.4f | mean IoU S&S %.4f S&F %.4f M3 %.4f | %.0f s\n",
                 static_cast<unsigned long long>(seed), row.probe_mean, row.hard_count, row.ss.hard_iou,
                 row.sf.hard_iou, row.m3.hard_iou, row.sf_dicece.hard_iou, row.sf.ece, row.sf_dicece.ece,
                 row.ss.mean_iou, row.sf.mean_iou, row.m3.mean_iou, seconds_since(t_seed));
  return row;
}

// Passes when the mean difference points the claimed way, or when the
// paired one-sided test for the opposite direction gives p >= 0.1.
struct Direction {
  bool pass = false;
  std::string text;
};

Direction directional(const std::string& label, const std::vector<double>& better, const std::vector<double>& worse) {
  double mean = 0.0;
  for (std::size_t i = 0; i < better.size(); ++i) mean += (better[i] - worse[i]) / double(better.size());
  Direction d;
  if (better.size() < 2) {
    // No spread estimate from one seed: only the sign is available.
    d.pass = mean >= 0.0;
    d.text = label + " diff " + fmt("%+.4f", mean) + " (one seed, sign only)";
    return d;
  }
  const auto t = metrics::paired_t_test(better, worse);
  // p for the wrong direction (better < worse).
  const double p_wrong = 1.0 - t.p_greater;
  d.pass = mean >= 0.0 || p_wrong >= 0.1;
  d.text = label + " diff " + fmt("%+.4f", mean) + " (p_wrong " + fmt("%.3f", p_wrong) + ")";
  return d;
}

Outcome criterion_ablation(const Options& opt) {
  const auto t0 = Clock::now();
  std::vector<double> a_sf, a_ss, b_full, b_m3, c_dicece_ece, c_ugml_ece;
  for (std::uint64_t seed = 0; seed < opt.seeds; ++seed) {
    const auto r = ablation_seed(opt, seed);
    a_sf.push_back(r.sf.hard_iou);
    a_ss.push_back(r.ss.hard_iou);
    b_full.push_back(r.sf.hard_iou);
    b_m3.push_back(r.m3.hard_iou);
    c_ugml_ece.push_back(r.sf.ece);
    c_dicece_ece.push_back(r.sf_dicece.ece);
  }
  // (c): lower ECE is better, so compare negated values.
  std::vector<double> neg_ugml, neg_dicece;
  for (double v : c_ugml_ece) neg_ugml.push_back(-v);
  for (double v : c_dicece_ece) neg_dicece.push_back(-v);
  const auto a = directional("(a) hard IoU S&F-S&S", a_sf, a_ss);
  const auto b = directional("(b) hard IoU full-M3", b_full, b_m3);
  const auto c = directional("(c) ECE dice+ce-ugml", neg_ugml, neg_dicece);
  Outcome out;
  out.pass = a.pass && b.pass && c.pass && longest_run <= 900.0;
  out.detail = std::to_string(opt.seeds) + " seeds, " + std::to_string(opt.size) + "px: " + a.text + "; " + b.text +
               "; " + c.text + "; longest training run " + fmt("%.0f", longest_run) + " s (limit 900); total " +
               fmt("%.0f", seconds_since(t0)) + " s";
  return out;
}

// ---- 9: CLI determinism ---------------------------------------------------------

int shell(const std::string& cmd) {
  const int status = std::system((cmd + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome criterion_determinism(const Options& opt) {
  Outcome out;
  if (opt.cli.empty() || !fs::exists(opt.cli)) {
    out.pass = false;
    out.detail = "ugdd executable not found (" + opt.cli + ")";
    return out;
  }
  const fs::path root = fs::temp_directory_path() / "ugdd_acceptance_cli";
  fs::remove_all(root);
  const std::string small = " --set size=32 --set base_channels=4 --set num_nodes=128 --set num_queries=64";
  auto pipeline = [&](const std::string& tag) {
    const fs::path dir = root / tag;
    const std::string q = "\"" + opt.cli + "\"";
    if (shell(q + " generate --count 12 --seed 21 --set size=32 --out " + (dir / "data").string()) != 0) return false;
    if (shell(q + " train --data " + (dir / "data/manifest.csv").string() + small +
              " --set stage1_max_epochs=1 --epochs 2 --seed 21 --out " + (dir / "run").string()) != 0)
      return false;
    return shell(q + " eval --checkpoint " + (dir / "run/model.ckpt").string() + " --data " +
                 (dir / "data/manifest.csv").string() + " --out " + (dir / "eval").string()) == 0;
  };
  if (!pipeline("a") || !pipeline("b")) {
    out.pass = false;
    out.detail = "a pipeline step failed";
    return out;
  }
  std::size_t compared = 0;
  std::vector<std::string> differing;
  for (const char* f : {"eval/per_sample.csv", "eval/aggregate.csv", "eval/bins.csv", "eval/hard.csv",
                        "run/train_log.csv"}) {
    ++compared;
    if (report::read_text((root / "a" / f).string()) != report::read_text((root / "b" / f).string()))
      differing.push_back(f);
  }
  out.pass = differing.empty();
  out.detail = "generate -> train 2 epochs (stage switch after 1) -> eval twice, " + std::to_string(compared) +
               " CSVs compared, " + std::to_string(differing.size()) + " differ";
  for (const auto& d : differing) out.detail += " " + d;
  return out;
}

std::set<int> parse_list(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.insert(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
#ifdef UGDD_CLI
  opt.cli = UGDD_CLI;
#endif
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    auto next = [&]() -> std::string {
      if (i + 1 >= argc) {
        std::fprintf(stderr, "missing value for %s\n", a.c_str());
        std::exit(2);
      }
      return argv[++i];
    };
    if (a == "--only") opt.only = parse_list(next());
    else if (a == "--cli") opt.cli = next();
    else if (a == "--seeds") opt.seeds = std::stoul(next());
    else if (a == "--stage1-epochs") opt.stage1_epochs = std::stoul(next());
    else if (a == "--stage2-epochs") opt.stage2_epochs = std::stoul(next());
    else if (a == "--size") opt.size = std::stoul(next());
    else if (a == "--verbose") opt.verbose = true;
    else {
      std::fprintf(stderr, "unknown argument %s\n", a.c_str());
      return 2;
    }
  }

  struct Criterion {
    int id;
    const char* name;
    Outcome (*run)(const Options&);
  };
  const Criterion all[] = {
      {1, "gradient correctness", criterion_gradients},
      {2, "wavelet exactness", criterion_wavelet},
      {3, "uncertainty semantics", criterion_uncertainty},
      {4, "loss semantics", criterion_loss},
      {5, "graph structure", criterion_graph},
      {6, "glance/gaze contract and curriculum", criterion_glance_gaze},
      {7, "metric oracles", criterion_metrics},
      {8, "directional ablation", criterion_ablation},
      {9, "CLI determinism", criterion_determinism},
  };
  bool ok = true;
  for (const auto& c : all) {
    if (!opt.only.empty() && !opt.only.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run(opt);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    ok = ok && o.pass;
    std::printf("%s criterion %d: %s -- %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  return ok ? 0 : 1;
}
