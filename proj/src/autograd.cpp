#include "ugdd/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_set>

#include "gemm.hpp"
#include "ugdd/errors.hpp"

namespace ugdd::ag {

namespace {

thread_local bool g_grad_enabled = true;

Var make_result(Tensor value, std::vector<NodePtr> parents, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  const bool needs = g_grad_enabled && std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) {
                       return p && p->requires_grad;
                     });
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

bool wants(const Node& self, std::size_t i) {
  return self.parents[i] && self.parents[i]->requires_grad;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* what) {
  std::array<std::size_t, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t x = a[i], y = b[i];
    if (x == y || y == 1) {
      out[i] = x;
    } else if (x == 1) {
      out[i] = y;
    } else {
      throw DimensionError(std::string(what) + ": cannot broadcast " + a.str() + " with " + b.str());
    }
  }
  return Shape{out[0], out[1], out[2], out[3]};
}

std::array<std::size_t, 4> bstrides(const Shape& s, const Shape& out) {
  const std::array<std::size_t, 4> contiguous{s.c * s.h * s.w, s.h * s.w, s.w, 1};
  std::array<std::size_t, 4> st{};
  for (std::size_t i = 0; i < 4; ++i) st[i] = (s[i] == 1 && out[i] != 1) ? 0 : contiguous[i];
  return st;
}

// Calls f(out_index, a_index, b_index) over the broadcast iteration space.
template <class F>
void for_each_broadcast(const Shape& out, const Shape& sa, const Shape& sb, F&& f) {
  if (sa == out && sb == out) {
    for (std::size_t i = 0; i < out.size(); ++i) f(i, i, i);
    return;
  }
  const auto ta = bstrides(sa, out);
  const auto tb = bstrides(sb, out);
  std::size_t o = 0;
  for (std::size_t n = 0; n < out.n; ++n)
    for (std::size_t c = 0; c < out.c; ++c)
      for (std::size_t h = 0; h < out.h; ++h) {
        const std::size_t ia = n * ta[0] + c * ta[1] + h * ta[2];
        const std::size_t ib = n * tb[0] + c * tb[1] + h * tb[2];
        for (std::size_t w = 0; w < out.w; ++w, ++o) f(o, ia + w * ta[3], ib + w * tb[3]);
      }
}

Var binary(Elementwise op, const Var& a, const Var& b) {
  const Shape sa = a.shape(), sb = b.shape();
  const Shape so = broadcast_shape(sa, sb, "elementwise");
  Tensor out(so);
  const auto& av = a.value().storage();
  const auto& bv = b.value().storage();
  auto& ov = out.storage();
  switch (op) {
    case Elementwise::Add:
      for_each_broadcast(so, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { ov[o] = av[i] + bv[j]; });
      break;
    case Elementwise::Sub:
      for_each_broadcast(so, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { ov[o] = av[i] - bv[j]; });
      break;
    case Elementwise::Mul:
      for_each_broadcast(so, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { ov[o] = av[i] * bv[j]; });
      break;
    case Elementwise::Div:
      for_each_broadcast(so, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
        if (bv[j] == 0.0) throw DomainError("elementwise div by zero");
        ov[o] = av[i] / bv[j];
      });
      break;
    default:
      throw ContractError("binary(): unary op tag");
  }
  return make_result(std::move(out), {a.node(), b.node()}, [op, sa, sb, so](Node& self) {
    const auto& g = self.grad.storage();
    const auto& av = self.parents[0]->value.storage();
    const auto& bv = self.parents[1]->value.storage();
    const bool ga = wants(self, 0), gb = wants(self, 1);
    double* da = ga ? self.parents[0]->ensure_grad().storage().data() : nullptr;
    double* db = gb ? self.parents[1]->ensure_grad().storage().data() : nullptr;
    for_each_broadcast(so, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
      const double go = g[o];
      switch (op) {
        case Elementwise::Add:
          if (da) da[i] += go;
          if (db) db[j] += go;
          break;
        case Elementwise::Sub:
          if (da) da[i] += go;
          if (db) db[j] -= go;
          break;
        case Elementwise::Mul:
          if (da) da[i] += go * bv[j];
          if (db) db[j] += go * av[i];
          break;
        case Elementwise::Div:
          if (da) da[i] += go / bv[j];
          if (db) db[j] -= go * av[i] / (bv[j] * bv[j]);
          break;
        default:
          break;
      }
    });
  });
}

// Unary op helper: forward value map and local derivative from (x, y).
template <class Fwd, class Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
  Tensor out(a.shape());
  const auto& av = a.value().storage();
  auto& ov = out.storage();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = fwd(av[i]);
  return make_result(std::move(out), {a.node()}, [deriv](Node& self) {
    const auto& g = self.grad.storage();
    const auto& x = self.parents[0]->value.storage();
    const auto& y = self.value.storage();
    auto& d = self.parents[0]->ensure_grad().storage();
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * deriv(x[i], y[i]);
  });
}

void im2col(const double* img, std::size_t C, std::size_t H, std::size_t W, std::size_t kh,
            std::size_t kw, ConvGeometry g, std::size_t Ho, std::size_t Wo, double* cols) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        double* row = cols + ((c * kh + ky) * kw + kx) * Ho * Wo;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            row[oy * Wo + ox] = (iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(H) &&
                                 ix < static_cast<std::ptrdiff_t>(W))
                                    ? img[(c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)]
                                    : 0.0;
          }
        }
      }
}

void col2im(const double* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t kh,
            std::size_t kw, ConvGeometry g, std::size_t Ho, std::size_t Wo, double* img) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const double* row = cols + ((c * kh + ky) * kw + kx) * Ho * Wo;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
            img[(c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)] += row[oy * Wo + ox];
          }
        }
      }
}

}  // namespace

// ---- node / var -------------------------------------------------------------

Tensor& Node::ensure_grad() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

void Var::zero_grad() {
  if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
}

Var constant(Tensor t) {
  auto node = std::make_shared<Node>();
  node->value = std::move(t);
  return Var(std::move(node));
}

Var parameter(Tensor t) {
  auto node = std::make_shared<Node>();
  node->value = std::move(t);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var detach(const Var& v) { return constant(v.value()); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---- elementwise -------------------------------------------------------------

Var elementwise(Elementwise op, const Var& a, const Var* b, double scalar) {
  switch (op) {
    case Elementwise::Add:
    case Elementwise::Sub:
    case Elementwise::Mul:
    case Elementwise::Div:
      if (!b) throw ContractError("binary elementwise op needs two operands");
      return binary(op, a, *b);
    case Elementwise::Exp:
      return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
    case Elementwise::Log:
      return log(a, scalar);
    case Elementwise::Relu:
      return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                   [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
    case Elementwise::MaxScalar:
      return unary(a, [scalar](double x) { return x > scalar ? x : scalar; },
                   [scalar](double x, double) { return x > scalar ? 1.0 : 0.0; });
  }
  throw ContractError("unknown elementwise op");
}

Var add(const Var& a, const Var& b) { return binary(Elementwise::Add, a, b); }
Var sub(const Var& a, const Var& b) { return binary(Elementwise::Sub, a, b); }
Var mul(const Var& a, const Var& b) { return binary(Elementwise::Mul, a, b); }
Var div(const Var& a, const Var& b) { return binary(Elementwise::Div, a, b); }
Var exp(const Var& a) { return elementwise(Elementwise::Exp, a); }
Var relu(const Var& a) { return elementwise(Elementwise::Relu, a); }
Var max_scalar(const Var& a, double s) { return elementwise(Elementwise::MaxScalar, a, nullptr, s); }

Var log(const Var& a, double stabilizer) {
  for (double v : a.value().storage()) {
    if (v + stabilizer <= 0.0) {
      throw DomainError("log of non-positive value " + std::to_string(v) +
                        (stabilizer > 0.0 ? " after stabilizer" : " (no stabilizer)"));
    }
  }
  return unary(a, [stabilizer](double x) { return std::log(x + stabilizer); },
               [stabilizer](double x, double) { return 1.0 / (x + stabilizer); });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var one_minus(const Var& a) {
  return unary(a, [](double x) { return 1.0 - x; }, [](double, double) { return -1.0; });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---- reductions and layout ---------------------------------------------------

Var sum(const Var& a) {
  Tensor out = Tensor::scalar(a.value().sum());
  return make_result(std::move(out), {a.node()}, [](Node& self) {
    const double g = self.grad[0];
    for (double& d : self.parents[0]->ensure_grad().storage()) d += g;
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var sum_axes(const Var& a, std::array<bool, 4> axes) {
  const Shape s = a.shape();
  const Shape so{axes[0] ? 1 : s.n, axes[1] ? 1 : s.c, axes[2] ? 1 : s.h, axes[3] ? 1 : s.w};
  Tensor out(so);
  const auto& av = a.value().storage();
  auto& ov = out.storage();
  for_each_broadcast(s, s, so, [&](std::size_t, std::size_t i, std::size_t j) { ov[j] += av[i]; });
  return make_result(std::move(out), {a.node()}, [s, so](Node& self) {
    const auto& g = self.grad.storage();
    auto& d = self.parents[0]->ensure_grad().storage();
    for_each_broadcast(s, s, so, [&](std::size_t, std::size_t i, std::size_t j) { d[i] += g[j]; });
  });
}

Var reshape(const Var& a, Shape s) {
  Tensor out = a.value().reshaped(s);
  return make_result(std::move(out), {a.node()}, [](Node& self) {
    const auto& g = self.grad.storage();
    auto& d = self.parents[0]->ensure_grad().storage();
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

Var permute(const Var& a, std::array<std::size_t, 4> perm) {
  const Shape s = a.shape();
  const auto dims = s.dims();
  std::array<bool, 4> seen{};
  for (std::size_t p : perm) {
    if (p > 3 || seen[p]) throw DimensionError("permute: invalid axis permutation");
    seen[p] = true;
  }
  const std::array<std::size_t, 4> in_strides{s.c * s.h * s.w, s.h * s.w, s.w, 1};
  const Shape so{dims[perm[0]], dims[perm[1]], dims[perm[2]], dims[perm[3]]};
  std::array<std::size_t, 4> st{};
  for (std::size_t i = 0; i < 4; ++i) st[i] = in_strides[perm[i]];
  // map[o] = input index for output position o
  std::vector<std::size_t> map(s.size());
  std::size_t o = 0;
  for (std::size_t i0 = 0; i0 < so.n; ++i0)
    for (std::size_t i1 = 0; i1 < so.c; ++i1)
      for (std::size_t i2 = 0; i2 < so.h; ++i2)
        for (std::size_t i3 = 0; i3 < so.w; ++i3) map[o++] = i0 * st[0] + i1 * st[1] + i2 * st[2] + i3 * st[3];
  Tensor out(so);
  const auto& av = a.value().storage();
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = av[map[i]];
  return make_result(std::move(out), {a.node()}, [map = std::move(map)](Node& self) {
    const auto& g = self.grad.storage();
    auto& d = self.parents[0]->ensure_grad().storage();
    for (std::size_t i = 0; i < map.size(); ++i) d[map[i]] += g[i];
  });
}

Var transpose_last(const Var& a) { return permute(a, {0, 1, 3, 2}); }

Var narrow(const Var& a, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape s = a.shape();
  if (axis > 3 || start + length > s[axis]) throw DimensionError("narrow: range out of bounds on " + s.str());
  auto dims = s.dims();
  dims[axis] = length;
  const Shape so{dims[0], dims[1], dims[2], dims[3]};
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < 4; ++i) inner *= s[i];
  Tensor out(so);
  const auto& av = a.value().storage();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>((o * s[axis] + start) * inner), length * inner,
                out.storage().begin() + static_cast<std::ptrdiff_t>(o * length * inner));
  return make_result(std::move(out), {a.node()}, [=](Node& self) {
    const auto& g = self.grad.storage();
    auto& d = self.parents[0]->ensure_grad().storage();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < length * inner; ++i) d[(o * s[axis] + start) * inner + i] += g[o * length * inner + i];
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of nothing");
  if (axis > 3) throw DimensionError("concat: bad axis");
  const Shape s0 = parts[0].shape();
  std::size_t total = 0;
  std::vector<std::size_t> extents;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < 4; ++i) {
      if (i != axis && p.shape()[i] != s0[i]) throw DimensionError("concat: shape mismatch " + s0.str() + " vs " + p.shape().str());
    }
    extents.push_back(p.shape()[axis]);
    total += p.shape()[axis];
    parents.push_back(p.node());
  }
  auto dims = s0.dims();
  dims[axis] = total;
  const Shape so{dims[0], dims[1], dims[2], dims[3]};
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < 4; ++i) inner *= s0[i];
  Tensor out(so);
  std::size_t base = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].value().storage();
    const std::size_t len = extents[k] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * len), len,
                  out.storage().begin() + static_cast<std::ptrdiff_t>(o * total * inner + base * inner));
    base += extents[k];
  }
  return make_result(std::move(out), std::move(parents), [=](Node& self) {
    const auto& g = self.grad.storage();
    std::size_t b = 0;
    for (std::size_t k = 0; k < extents.size(); ++k) {
      const std::size_t len = extents[k] * inner;
      if (wants(self, k)) {
        auto& d = self.parents[k]->ensure_grad().storage();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < len; ++i) d[o * len + i] += g[o * total * inner + b * inner + i];
      }
      b += extents[k];
    }
  });
}

Var flip(const Var& a, std::size_t axis) {
  const Shape s = a.shape();
  if (axis > 3) throw DimensionError("flip: bad axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < 4; ++i) inner *= s[i];
  const std::size_t len = s[axis];
  std::vector<std::size_t> map(s.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < len; ++k)
      for (std::size_t i = 0; i < inner; ++i) map[(o * len + k) * inner + i] = (o * len + (len - 1 - k)) * inner + i;
  Tensor out(s);
  const auto& av = a.value().storage();
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = av[map[i]];
  return make_result(std::move(out), {a.node()}, [map = std::move(map)](Node& self) {
    const auto& g = self.grad.storage();
    auto& d = self.parents[0]->ensure_grad().storage();
    for (std::size_t i = 0; i < map.size(); ++i) d[map[i]] += g[i];
  });
}

// ---- structured ----------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.w != sb.h) throw DimensionError("matmul: inner dims differ " + sa.str() + " x " + sb.str());
  const Shape batch = broadcast_shape(Shape{sa.n, sa.c, 1, 1}, Shape{sb.n, sb.c, 1, 1}, "matmul");
  const std::size_t M = sa.h, K = sa.w, N = sb.w;
  const Shape so{batch.n, batch.c, M, N};
  auto index_a = [=](std::size_t n, std::size_t c) { return ((sa.n == 1 ? 0 : n) * sa.c + (sa.c == 1 ? 0 : c)) * M * K; };
  auto index_b = [=](std::size_t n, std::size_t c) { return ((sb.n == 1 ? 0 : n) * sb.c + (sb.c == 1 ? 0 : c)) * K * N; };
  Tensor out(so);
  const double* av = a.value().storage().data();
  const double* bv = b.value().storage().data();
  for (std::size_t n = 0; n < so.n; ++n)
    for (std::size_t c = 0; c < so.c; ++c)
      detail::gemm_nn(M, N, K, av + index_a(n, c), bv + index_b(n, c), out.storage().data() + (n * so.c + c) * M * N);
  return make_result(std::move(out), {a.node(), b.node()}, [=](Node& self) {
    const double* g = self.grad.storage().data();
    const double* av = self.parents[0]->value.storage().data();
    const double* bv = self.parents[1]->value.storage().data();
    double* da = wants(self, 0) ? self.parents[0]->ensure_grad().storage().data() : nullptr;
    double* db = wants(self, 1) ? self.parents[1]->ensure_grad().storage().data() : nullptr;
    for (std::size_t n = 0; n < so.n; ++n)
      for (std::size_t c = 0; c < so.c; ++c) {
        const double* gc = g + (n * so.c + c) * M * N;
        if (da) detail::gemm_nt(M, K, N, gc, bv + index_b(n, c), da + index_a(n, c));
        if (db) detail::gemm_tn(K, N, M, av + index_a(n, c), gc, db + index_b(n, c));
      }
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, ConvGeometry g) {
  const Shape sx = x.shape(), sw = weight.shape();
  if (sw.c != sx.c) throw DimensionError("conv2d: weight expects " + std::to_string(sw.c) + " input channels, got " + sx.str());
  if (g.stride == 0) throw DimensionError("conv2d: stride must be positive");
  const std::size_t kh = sw.h, kw = sw.w;
  if (sx.h + 2 * g.padding < kh || sx.w + 2 * g.padding < kw) throw DimensionError("conv2d: kernel larger than padded input");
  const std::size_t Ho = (sx.h + 2 * g.padding - kh) / g.stride + 1;
  const std::size_t Wo = (sx.w + 2 * g.padding - kw) / g.stride + 1;
  const std::size_t Cout = sw.n, Cin = sx.c, CK = Cin * kh * kw, P = Ho * Wo;
  const bool has_bias = bias.defined();
  if (has_bias && !(bias.shape() == Shape{1, Cout, 1, 1})) throw DimensionError("conv2d: bias must be (1,Cout,1,1)");
  Tensor out(Shape{sx.n, Cout, Ho, Wo});
  std::vector<double> cols(CK * P);
  for (std::size_t n = 0; n < sx.n; ++n) {
    im2col(x.value().storage().data() + n * Cin * sx.h * sx.w, Cin, sx.h, sx.w, kh, kw, g, Ho, Wo, cols.data());
    double* o = out.storage().data() + n * Cout * P;
    if (has_bias)
      for (std::size_t co = 0; co < Cout; ++co) std::fill_n(o + co * P, P, bias.value()[co]);
    detail::gemm_nn(Cout, P, CK, weight.value().storage().data(), cols.data(), o);
  }
  std::vector<NodePtr> parents{x.node(), weight.node()};
  if (has_bias) parents.push_back(bias.node());
  return make_result(std::move(out), std::move(parents), [=](Node& self) {
    const auto& xv = self.parents[0]->value.storage();
    const auto& wv = self.parents[1]->value.storage();
    const double* gr = self.grad.storage().data();
    double* dx = wants(self, 0) ? self.parents[0]->ensure_grad().storage().data() : nullptr;
    double* dw = wants(self, 1) ? self.parents[1]->ensure_grad().storage().data() : nullptr;
    double* db = (has_bias && wants(self, 2)) ? self.parents[2]->ensure_grad().storage().data() : nullptr;
    std::vector<double> cols(CK * P), dcols(dx ? CK * P : 0);
    for (std::size_t n = 0; n < sx.n; ++n) {
      const double* gn = gr + n * Cout * P;
      if (db)
        for (std::size_t co = 0; co < Cout; ++co)
          for (std::size_t p = 0; p < P; ++p) db[co] += gn[co * P + p];
      if (dw) {
        im2col(xv.data() + n * Cin * sx.h * sx.w, Cin, sx.h, sx.w, kh, kw, g, Ho, Wo, cols.data());
        detail::gemm_nt(Cout, CK, P, gn, cols.data(), dw);
      }
      if (dx) {
        std::fill(dcols.begin(), dcols.end(), 0.0);
        detail::gemm_tn(CK, P, Cout, wv.data(), gn, dcols.data());
        col2im(dcols.data(), Cin, sx.h, sx.w, kh, kw, g, Ho, Wo, dx + n * Cin * sx.h * sx.w);
      }
    }
  });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, ConvGeometry g) {
  const Shape sx = x.shape(), sw = weight.shape();
  if (sw.n != sx.c) throw DimensionError("conv_transpose2d: weight expects " + std::to_string(sw.n) + " input channels, got " + sx.str());
  if (g.stride == 0) throw DimensionError("conv_transpose2d: stride must be positive");
  const std::size_t kh = sw.h, kw = sw.w, Cin = sx.c, Cout = sw.c;
  const std::size_t full_h = (sx.h - 1) * g.stride + kh, full_w = (sx.w - 1) * g.stride + kw;
  if (full_h <= 2 * g.padding || full_w <= 2 * g.padding) throw DimensionError("conv_transpose2d: padding too large");
  const std::size_t Ho = full_h - 2 * g.padding, Wo = full_w - 2 * g.padding;
  const std::size_t P = sx.h * sx.w, CK = Cout * kh * kw;
  const bool has_bias = bias.defined();
  if (has_bias && !(bias.shape() == Shape{1, Cout, 1, 1})) throw DimensionError("conv_transpose2d: bias must be (1,Cout,1,1)");
  Tensor out(Shape{sx.n, Cout, Ho, Wo});
  std::vector<double> cols(CK * P);
  for (std::size_t n = 0; n < sx.n; ++n) {
    std::fill(cols.begin(), cols.end(), 0.0);
    detail::gemm_tn(CK, P, Cin, weight.value().storage().data(), x.value().storage().data() + n * Cin * P, cols.data());
    double* o = out.storage().data() + n * Cout * Ho * Wo;
    col2im(cols.data(), Cout, Ho, Wo, kh, kw, g, sx.h, sx.w, o);
    if (has_bias)
      for (std::size_t co = 0; co < Cout; ++co)
        for (std::size_t p = 0; p < Ho * Wo; ++p) o[co * Ho * Wo + p] += bias.value()[co];
  }
  std::vector<NodePtr> parents{x.node(), weight.node()};
  if (has_bias) parents.push_back(bias.node());
  return make_result(std::move(out), std::move(parents), [=](Node& self) {
    const auto& xv = self.parents[0]->value.storage();
    const auto& wv = self.parents[1]->value.storage();
    const double* gr = self.grad.storage().data();
    double* dx = wants(self, 0) ? self.parents[0]->ensure_grad().storage().data() : nullptr;
    double* dw = wants(self, 1) ? self.parents[1]->ensure_grad().storage().data() : nullptr;
    double* db = (has_bias && wants(self, 2)) ? self.parents[2]->ensure_grad().storage().data() : nullptr;
    std::vector<double> gcols(CK * P);
    for (std::size_t n = 0; n < sx.n; ++n) {
      const double* gn = gr + n * Cout * Ho * Wo;
      if (db)
        for (std::size_t co = 0; co < Cout; ++co)
          for (std::size_t p = 0; p < Ho * Wo; ++p) db[co] += gn[co * Ho * Wo + p];
      im2col(gn, Cout, Ho, Wo, kh, kw, g, sx.h, sx.w, gcols.data());
      if (dx) detail::gemm_nn(Cin, P, CK, wv.data(), gcols.data(), dx + n * Cin * P);
      if (dw) detail::gemm_nt(Cin, CK, P, xv.data() + n * Cin * P, gcols.data(), dw);
    }
  });
}

Var maxpool2d(const Var& x, std::size_t k) {
  const Shape s = x.shape();
  if (k == 0 || s.h % k != 0 || s.w % k != 0) throw DimensionError("maxpool2d: " + s.str() + " not divisible by kernel " + std::to_string(k));
  const Shape so{s.n, s.c, s.h / k, s.w / k};
  Tensor out(so);
  std::vector<std::size_t> arg(so.size());
  const auto& xv = x.value().storage();
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc)
    for (std::size_t oy = 0; oy < so.h; ++oy)
      for (std::size_t ox = 0; ox < so.w; ++ox, ++o) {
        std::size_t best = (nc * s.h + oy * k) * s.w + ox * k;
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::size_t i = (nc * s.h + oy * k + dy) * s.w + ox * k + dx;
            if (xv[i] > xv[best]) best = i;
          }
        arg[o] = best;
        out[o] = xv[best];
      }
  return make_result(std::move(out), {x.node()}, [arg = std::move(arg)](Node& self) {
    const auto& g = self.grad.storage();
    auto& d = self.parents[0]->ensure_grad().storage();
    for (std::size_t i = 0; i < arg.size(); ++i) d[arg[i]] += g[i];
  });
}

Var softmax(const Var& x, std::size_t axis) {
  const Shape s = x.shape();
  if (axis > 3) throw DimensionError("softmax: bad axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < 4; ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Tensor out(s);
  const auto& xv = x.value().storage();
  auto& ov = out.storage();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < len; ++k) m = std::max(m, xv[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < len; ++k) z += (ov[base + k * inner] = std::exp(xv[base + k * inner] - m));
      for (std::size_t k = 0; k < len; ++k) ov[base + k * inner] /= z;
    }
  return make_result(std::move(out), {x.node()}, [=](Node& self) {
    const auto& g = self.grad.storage();
    const auto& y = self.value.storage();
    auto& d = self.parents[0]->ensure_grad().storage();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * len * inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < len; ++k) dot += g[base + k * inner] * y[base + k * inner];
        for (std::size_t k = 0; k < len; ++k) d[base + k * inner] += y[base + k * inner] * (g[base + k * inner] - dot);
      }
  });
}

Var bilinear_sample(const Var& source, const Var& offsets) {
  const Shape s = source.shape();
  if (!(offsets.shape() == Shape{s.n, 2, s.h, s.w})) {
    throw DimensionError("bilinear_sample: offsets " + offsets.shape().str() + " do not match source " + s.str());
  }
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(s.h), W = static_cast<std::ptrdiff_t>(s.w);
  const std::size_t plane = s.h * s.w;
  auto corner = [H, W](const double* img, std::ptrdiff_t y, std::ptrdiff_t x) {
    return (y >= 0 && x >= 0 && y < H && x < W) ? img[y * W + x] : 0.0;
  };
  Tensor out(s);
  const auto& sv = source.value().storage();
  const auto& ov = offsets.value().storage();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < s.w; ++x) {
        const double py = static_cast<double>(y) + ov[(n * 2 + 0) * plane + y * s.w + x];
        const double px = static_cast<double>(x) + ov[(n * 2 + 1) * plane + y * s.w + x];
        const double fy = std::floor(py), fx = std::floor(px);
        const double wy = py - fy, wx = px - fx;
        const auto y0 = static_cast<std::ptrdiff_t>(fy), x0 = static_cast<std::ptrdiff_t>(fx);
        for (std::size_t c = 0; c < s.c; ++c) {
          const double* img = sv.data() + (n * s.c + c) * plane;
          out[(n * s.c + c) * plane + y * s.w + x] =
              (1 - wy) * (1 - wx) * corner(img, y0, x0) + (1 - wy) * wx * corner(img, y0, x0 + 1) +
              wy * (1 - wx) * corner(img, y0 + 1, x0) + wy * wx * corner(img, y0 + 1, x0 + 1);
        }
      }
  return make_result(std::move(out), {source.node(), offsets.node()}, [=](Node& self) {
    const auto& sv = self.parents[0]->value.storage();
    const auto& ov = self.parents[1]->value.storage();
    const auto& g = self.grad.storage();
    double* ds = wants(self, 0) ? self.parents[0]->ensure_grad().storage().data() : nullptr;
    double* doff = wants(self, 1) ? self.parents[1]->ensure_grad().storage().data() : nullptr;
    auto inside = [&](std::ptrdiff_t y, std::ptrdiff_t x) { return y >= 0 && x >= 0 && y < H && x < W; };
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) {
          const std::size_t oy_i = (n * 2 + 0) * plane + y * s.w + x, ox_i = (n * 2 + 1) * plane + y * s.w + x;
          const double py = static_cast<double>(y) + ov[oy_i];
          const double px = static_cast<double>(x) + ov[ox_i];
          const double fy = std::floor(py), fx = std::floor(px);
          const double wy = py - fy, wx = px - fx;
          const auto y0 = static_cast<std::ptrdiff_t>(fy), x0 = static_cast<std::ptrdiff_t>(fx);
          double gy = 0.0, gx = 0.0;
          for (std::size_t c = 0; c < s.c; ++c) {
            const std::size_t cb = (n * s.c + c) * plane;
            const double go = g[cb + y * s.w + x];
            if (go == 0.0) continue;
            const double* img = sv.data() + cb;
            const double v00 = corner(img, y0, x0), v01 = corner(img, y0, x0 + 1);
            const double v10 = corner(img, y0 + 1, x0), v11 = corner(img, y0 + 1, x0 + 1);
            gy += go * ((1 - wx) * (v10 - v00) + wx * (v11 - v01));
            gx += go * ((1 - wy) * (v01 - v00) + wy * (v11 - v10));
            if (ds) {
              if (inside(y0, x0)) ds[cb + y0 * W + x0] += go * (1 - wy) * (1 - wx);
              if (inside(y0, x0 + 1)) ds[cb + y0 * W + x0 + 1] += go * (1 - wy) * wx;
              if (inside(y0 + 1, x0)) ds[cb + (y0 + 1) * W + x0] += go * wy * (1 - wx);
              if (inside(y0 + 1, x0 + 1)) ds[cb + (y0 + 1) * W + x0 + 1] += go * wy * wx;
            }
          }
          if (doff) {
            doff[oy_i] += gy;
            doff[ox_i] += gx;
          }
        }
  });
}

Var gather_rows(const Var& x, std::span<const std::size_t> index) {
  const Shape s = x.shape();
  if (s.n != 1 || s.c != 1) throw DimensionError("gather_rows expects (1,1,R,C), got " + s.str());
  std::vector<std::size_t> idx(index.begin(), index.end());
  for (std::size_t i : idx)
    if (i >= s.h) throw DimensionError("gather_rows: row index out of range");
  const std::size_t C = s.w;
  Tensor out(Shape{1, 1, idx.size(), C});
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(x.value().storage().begin() + static_cast<std::ptrdiff_t>(idx[r] * C), C,
                out.storage().begin() + static_cast<std::ptrdiff_t>(r * C));
  return make_result(std::move(out), {x.node()}, [idx = std::move(idx), C](Node& self) {
    const auto& g = self.grad.storage();
    auto& d = self.parents[0]->ensure_grad().storage();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < C; ++c) d[idx[r] * C + c] += g[r * C + c];
  });
}

Var scatter_rows(const Var& x, std::span<const std::size_t> index, std::size_t rows) {
  const Shape s = x.shape();
  if (s.n != 1 || s.c != 1 || s.h != index.size()) throw DimensionError("scatter_rows: expects (1,1,N,C) with N indices");
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> weight(rows, 0.0);
  for (std::size_t i : idx) {
    if (i >= rows) throw DimensionError("scatter_rows: row index out of range");
    weight[i] += 1.0;
  }
  for (double& w : weight) w = w > 0.0 ? 1.0 / w : 0.0;
  const std::size_t C = s.w;
  Tensor out(Shape{1, 1, rows, C});
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t c = 0; c < C; ++c) out[idx[r] * C + c] += weight[idx[r]] * x.value()[r * C + c];
  return make_result(std::move(out), {x.node()}, [idx = std::move(idx), weight = std::move(weight), C](Node& self) {
    const auto& g = self.grad.storage();
    auto& d = self.parents[0]->ensure_grad().storage();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < C; ++c) d[r * C + c] += weight[idx[r]] * g[idx[r] * C + c];
  });
}

Var relative_position_bias(const Var& table, std::size_t h, std::size_t w) {
  const Shape s = table.shape();
  if (s.n != 1 || s.c != 1 || s.h != s.w || s.h % 2 == 0) throw DimensionError("relative_position_bias: table must be (1,1,2r+1,2r+1)");
  const auto r = static_cast<std::ptrdiff_t>(s.h / 2);
  const std::size_t T = h * w, R = s.w;
  // -1 marks pairs outside the window
  std::vector<std::ptrdiff_t> map(T * T, -1);
  for (std::size_t i = 0; i < T; ++i) {
    const auto yi = static_cast<std::ptrdiff_t>(i / w), xi = static_cast<std::ptrdiff_t>(i % w);
    for (std::size_t j = 0; j < T; ++j) {
      const auto dy = static_cast<std::ptrdiff_t>(j / w) - yi, dx = static_cast<std::ptrdiff_t>(j % w) - xi;
      if (std::abs(dy) <= r && std::abs(dx) <= r) map[i * T + j] = (dy + r) * static_cast<std::ptrdiff_t>(R) + (dx + r);
    }
  }
  Tensor out(Shape{1, 1, T, T});
  for (std::size_t k = 0; k < map.size(); ++k)
    if (map[k] >= 0) out[k] = table.value()[static_cast<std::size_t>(map[k])];
  return make_result(std::move(out), {table.node()}, [map = std::move(map)](Node& self) {
    const auto& g = self.grad.storage();
    auto& d = self.parents[0]->ensure_grad().storage();
    for (std::size_t k = 0; k < map.size(); ++k)
      if (map[k] >= 0) d[static_cast<std::size_t>(map[k])] += g[k];
  });
}

// ---- backward -------------------------------------------------------------------

void backward(const Var& loss) {
  if (!(loss.shape() == Shape{1, 1, 1, 1})) throw ContractError("backward(): loss must be scalar, got " + loss.shape().str());
  if (!loss.requires_grad()) return;
  // Iterative post-order DFS gives a topological order; each node once.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p && p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) {
      n->backward_fn(*n);
      n->grad = Tensor();  // interior grads are not retained
    }
  }
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw ContractError("finite_difference_gradient: step must be positive");
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace ugdd::ag
