#include "tgq/autograd.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "tgq/kernels.hpp"

namespace tgq::ag {

namespace {

bool any_requires(const std::vector<Var>& parents) {
  for (const auto& p : parents) {
    if (p->requires_grad) return true;
  }
  return false;
}

Var make(Tensor value, std::vector<Var> parents, BackwardRule rule, std::string name) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = any_requires(parents);
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->rule = std::move(rule);
  }
  n->name = std::move(name);
  return n;
}

enum class Bcast { kSame, kRhsScalar, kLhsScalar };

Bcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.same_shape(b)) return Bcast::kSame;
  if (b.is_scalar()) return Bcast::kRhsScalar;
  if (a.is_scalar()) return Bcast::kLhsScalar;
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                              shape_str(b.shape()));
}

// Applies f elementwise with scalar broadcast; returns the output.
template <class F>
Tensor zip(const Tensor& a, const Tensor& b, Bcast k, F f) {
  const Tensor& big = k == Bcast::kLhsScalar ? b : a;
  Tensor out(big.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = k == Bcast::kLhsScalar ? a[0] : a[i];
    const double y = k == Bcast::kRhsScalar ? b[0] : b[i];
    out[i] = f(x, y);
  }
  return out;
}

// Gradient wrt an operand that may have been broadcast from one element.
Tensor reduce_to(const Tensor& g, const Tensor& like) {
  if (g.same_shape(like)) return g;
  double s = 0.0;
  for (double v : g.raw()) s += v;
  return Tensor(like.shape(), std::vector<double>{s});
}

template <class F>
Var unary(const Var& a, const char* name, F f, std::function<double(double x, double y)> dfdx) {
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a->value[i]);
  Tensor y = out;
  return make(std::move(out), {a},
              [a, y = std::move(y), dfdx](const Tensor& g, const std::vector<bool>&) {
                Tensor da(g.shape());
                for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * dfdx(a->value[i], y[i]);
                return std::vector<Tensor>{std::move(da)};
              },
              name);
}

}  // namespace

Var leaf(Tensor value, bool requires_grad, std::string name) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->name = std::move(name);
  return n;
}

Var custom(Tensor value, std::vector<Var> parents, BackwardRule rule, std::string name) {
  return make(std::move(value), std::move(parents), std::move(rule), std::move(name));
}

Var add(const Var& a, const Var& b) {
  const auto k = broadcast_kind(a->value, b->value, "add");
  return make(zip(a->value, b->value, k, [](double x, double y) { return x + y; }), {a, b},
              [a, b](const Tensor& g, const std::vector<bool>& need) {
                return std::vector<Tensor>{need[0] ? reduce_to(g, a->value) : Tensor{},
                                           need[1] ? reduce_to(g, b->value) : Tensor{}};
              },
              "add");
}

Var sub(const Var& a, const Var& b) {
  const auto k = broadcast_kind(a->value, b->value, "sub");
  return make(zip(a->value, b->value, k, [](double x, double y) { return x - y; }), {a, b},
              [a, b](const Tensor& g, const std::vector<bool>& need) {
                Tensor gb;
                if (need[1]) {
                  Tensor ng(g.shape());
                  for (std::size_t i = 0; i < g.size(); ++i) ng[i] = -g[i];
                  gb = reduce_to(ng, b->value);
                }
                return std::vector<Tensor>{need[0] ? reduce_to(g, a->value) : Tensor{}, std::move(gb)};
              },
              "sub");
}

Var mul(const Var& a, const Var& b) {
  const auto k = broadcast_kind(a->value, b->value, "mul");
  return make(zip(a->value, b->value, k, [](double x, double y) { return x * y; }), {a, b},
              [a, b, k](const Tensor& g, const std::vector<bool>& need) {
                Tensor ga, gb;
                if (need[0]) {
                  Tensor t(g.shape());
                  for (std::size_t i = 0; i < t.size(); ++i) {
                    t[i] = g[i] * (k == Bcast::kRhsScalar ? b->value[0] : b->value[i]);
                  }
                  ga = reduce_to(t, a->value);
                }
                if (need[1]) {
                  Tensor t(g.shape());
                  for (std::size_t i = 0; i < t.size(); ++i) {
                    t[i] = g[i] * (k == Bcast::kLhsScalar ? a->value[0] : a->value[i]);
                  }
                  gb = reduce_to(t, b->value);
                }
                return std::vector<Tensor>{std::move(ga), std::move(gb)};
              },
              "mul");
}

Var div(const Var& a, const Var& b) {
  const auto k = broadcast_kind(a->value, b->value, "div");
  for (double v : b->value.raw()) {
    if (v == 0.0) throw std::domain_error("div: division by zero");
  }
  Tensor out = zip(a->value, b->value, k, [](double x, double y) { return x / y; });
  return make(std::move(out), {a, b},
              [a, b, k](const Tensor& g, const std::vector<bool>& need) {
                Tensor ga, gb;
                const Tensor& big = k == Bcast::kLhsScalar ? b->value : a->value;
                if (need[0]) {
                  Tensor t(big.shape());
                  for (std::size_t i = 0; i < t.size(); ++i) {
                    const double bv = k == Bcast::kRhsScalar ? b->value[0] : b->value[i];
                    t[i] = g[i] / bv;
                  }
                  ga = reduce_to(t, a->value);
                }
                if (need[1]) {
                  Tensor t(big.shape());
                  for (std::size_t i = 0; i < t.size(); ++i) {
                    const double av = k == Bcast::kLhsScalar ? a->value[0] : a->value[i];
                    const double bv = k == Bcast::kRhsScalar ? b->value[0] : b->value[i];
                    t[i] = -g[i] * av / (bv * bv);
                  }
                  gb = reduce_to(t, b->value);
                }
                return std::vector<Tensor>{std::move(ga), std::move(gb)};
              },
              "div");
}

Var add(const Var& a, double b) { return add(a, constant(Tensor::scalar(b))); }
Var mul(const Var& a, double b) { return mul(a, constant(Tensor::scalar(b))); }

Var neg(const Var& a) {
  return unary(a, "neg", [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var exp(const Var& a) {
  return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  for (double v : a->value.raw()) {
    if (!(v > 0.0)) throw std::domain_error("log: argument must be positive, got " + std::to_string(v));
  }
  return unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sqrt(const Var& a) {
  for (double v : a->value.raw()) {
    if (v < 0.0) throw std::domain_error("sqrt: argument must be non-negative, got " + std::to_string(v));
  }
  return unary(a, "sqrt", [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var square(const Var& a) {
  return unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var silu(const Var& a) {
  return unary(
      a, "silu", [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(av.shape()) + " and " +
                                shape_str(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  kernels::gemm(kernels::Trans::kNo, kernels::Trans::kNo, {m, n, k}, av.data(), bv.data(), out.data());
  return make(std::move(out), {a, b},
              [a, b, m, k, n](const Tensor& g, const std::vector<bool>& need) {
                Tensor ga, gb;
                if (need[0]) {
                  ga = Tensor({m, k});
                  kernels::gemm(kernels::Trans::kNo, kernels::Trans::kYes, {m, k, n}, g.data(), b->value.data(),
                                ga.data());
                }
                if (need[1]) {
                  gb = Tensor({k, n});
                  kernels::gemm(kernels::Trans::kYes, kernels::Trans::kNo, {k, n, m}, a->value.data(), g.data(),
                                gb.data());
                }
                return std::vector<Tensor>{std::move(ga), std::move(gb)};
              },
              "matmul");
}

Var add_bias(const Var& x, const Var& bias) {
  const Tensor& xv = x->value;
  const Tensor& bv = bias->value;
  if (xv.rank() != 2 || bv.rank() != 1 || bv.dim(0) != xv.dim(1)) {
    throw std::invalid_argument("add_bias: incompatible shapes " + shape_str(xv.shape()) + " and " +
                                shape_str(bv.shape()));
  }
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  Tensor out = xv;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  }
  return make(std::move(out), {x, bias},
              [rows, cols](const Tensor& g, const std::vector<bool>& need) {
                Tensor gb;
                if (need[1]) {
                  gb = Tensor({cols});
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                  }
                }
                return std::vector<Tensor>{need[0] ? g : Tensor{}, std::move(gb)};
              },
              "add_bias");
}

Var reduce(Reduce op, const Var& a, int axis) {
  const Tensor& av = a->value;
  std::size_t outer = 1, len = av.size(), inner = 1;
  Tensor::Shape out_shape{1};
  if (axis != kAllAxes) {
    if (axis < 0 || static_cast<std::size_t>(axis) >= av.rank()) {
      throw std::invalid_argument("reduce: invalid axis " + std::to_string(axis) + " for shape " +
                                  shape_str(av.shape()));
    }
    const auto ax = static_cast<std::size_t>(axis);
    outer = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= av.dim(i);
    len = av.dim(ax);
    inner = 1;
    for (std::size_t i = ax + 1; i < av.rank(); ++i) inner *= av.dim(i);
    out_shape.clear();
    for (std::size_t i = 0; i < av.rank(); ++i) {
      if (i != ax) out_shape.push_back(av.dim(i));
    }
    if (out_shape.empty()) out_shape.push_back(1);
  }
  Tensor out(out_shape);
  std::vector<std::size_t> argmax(op == Reduce::kMax ? out.size() : 0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t oi = o * inner + in;
      double acc = op == Reduce::kMax ? av[o * len * inner + in] : 0.0;
      std::size_t best = 0;
      for (std::size_t l = 0; l < len; ++l) {
        const double v = av[(o * len + l) * inner + in];
        if (op == Reduce::kMax) {
          if (v > acc) {
            acc = v;
            best = l;
          }
        } else {
          acc += v;
        }
      }
      if (op == Reduce::kMean) acc /= static_cast<double>(len);
      if (op == Reduce::kMax) argmax[oi] = best;
      out[oi] = acc;
    }
  }
  const char* name = op == Reduce::kSum ? "sum" : op == Reduce::kMean ? "mean" : "max";
  return make(std::move(out), {a},
              [a, op, outer, len, inner, argmax = std::move(argmax)](const Tensor& g, const std::vector<bool>&) {
                Tensor ga(a->value.shape());
                for (std::size_t o = 0; o < outer; ++o) {
                  for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t oi = o * inner + in;
                    if (op == Reduce::kMax) {
                      ga[(o * len + argmax[oi]) * inner + in] = g[oi];
                      continue;
                    }
                    const double v = op == Reduce::kMean ? g[oi] / static_cast<double>(len) : g[oi];
                    for (std::size_t l = 0; l < len; ++l) ga[(o * len + l) * inner + in] = v;
                  }
                }
                return std::vector<Tensor>{std::move(ga)};
              },
              name);
}

GradMap backward(const Var& root) {
  if (!root) throw std::invalid_argument("backward: null root");
  if (!root->value.is_scalar()) {
    throw std::invalid_argument("backward: root must be scalar-valued, got shape " + shape_str(root->value.shape()));
  }
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<const Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  if (root->requires_grad) {
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
  }
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }
  for (Node* n : order) {
    n->grad = Tensor{};
    n->has_grad = false;
  }
  GradMap grads;
  if (order.empty()) return grads;

  root->grad = Tensor(root->value.shape(), 1.0);
  root->has_grad = true;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->has_grad || !n->rule) continue;
    std::vector<bool> need(n->parents.size());
    for (std::size_t i = 0; i < need.size(); ++i) need[i] = n->parents[i]->requires_grad;
    std::vector<Tensor> pg = n->rule(n->grad, need);
    if (pg.size() != n->parents.size()) {
      throw std::logic_error("backward: rule of '" + n->name + "' returned " + std::to_string(pg.size()) +
                             " gradients for " + std::to_string(n->parents.size()) + " parents");
    }
    for (std::size_t i = 0; i < pg.size(); ++i) {
      if (!need[i]) continue;
      Node* p = n->parents[i].get();
      if (!pg[i].same_shape(p->value)) {
        throw std::logic_error("backward: rule of '" + n->name + "' produced gradient of shape " +
                               shape_str(pg[i].shape()) + " for parent of shape " + shape_str(p->value.shape()));
      }
      if (!p->has_grad) {
        p->grad = std::move(pg[i]);
        p->has_grad = true;
      } else {
        for (std::size_t j = 0; j < p->grad.size(); ++j) p->grad[j] += pg[i][j];
      }
    }
  }
  for (Node* n : order) {
    if (n->parents.empty() && n->has_grad) grads.emplace(n, n->grad);
  }
  return grads;
}

}  // namespace tgq::ag
