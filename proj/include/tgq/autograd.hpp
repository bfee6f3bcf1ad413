#pragma once

// Minimal reverse-mode automatic differentiation over Tensor values.
//
// A graph is built eagerly: every op returns a new Node holding its value
// and, when any parent requires a gradient, a rule mapping the output
// gradient to parent gradients. backward() walks the graph in reverse
// topological order and accumulates additively into each node.

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "tgq/tensor.hpp"

namespace tgq::ag {

struct Node;
using Var = std::shared_ptr<Node>;

/// Computes one gradient per parent. `needed[i]` is false when parent i
/// does not require a gradient; the rule may return an empty Tensor there.
using BackwardRule = std::function<std::vector<Tensor>(const Tensor& grad_out, const std::vector<bool>& needed)>;

struct Node {
  Tensor value;
  std::vector<Var> parents;
  BackwardRule rule;
  Tensor grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::string name;
};

using GradMap = std::unordered_map<const Node*, Tensor>;

Var leaf(Tensor value, bool requires_grad = false, std::string name = {});
inline Var constant(Tensor value) { return leaf(std::move(value), false); }

/// Node whose gradient is defined entirely by `rule`. Rule outputs are
/// checked against parent shapes at backward time.
Var custom(Tensor value, std::vector<Var> parents, BackwardRule rule, std::string name = {});

// Elementwise. The second operand must have the same shape or be a
// single element (scalar broadcast); anything else is an error.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add(const Var& a, double b);
Var mul(const Var& a, double b);

Var neg(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
/// x * sigmoid(x).
Var silu(const Var& a);

Var matmul(const Var& a, const Var& b);
/// x[B x N] + bias[N] on every row.
Var add_bias(const Var& x, const Var& bias);

enum class Reduce { kSum, kMean, kMax };
constexpr int kAllAxes = -1;
/// Reduces over `axis` (or all elements with kAllAxes). Max routes the
/// gradient to the first maximal element.
Var reduce(Reduce op, const Var& a, int axis = kAllAxes);
inline Var sum(const Var& a, int axis = kAllAxes) { return reduce(Reduce::kSum, a, axis); }
inline Var mean(const Var& a, int axis = kAllAxes) { return reduce(Reduce::kMean, a, axis); }
inline Var max(const Var& a, int axis = kAllAxes) { return reduce(Reduce::kMax, a, axis); }

/// Backpropagates from a single-element root. Returns the gradient of every
/// reachable leaf that requires one; node grads are reset first, so a graph
/// may be differentiated more than once.
GradMap backward(const Var& root);

}  // namespace tgq::ag
