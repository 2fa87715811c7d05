#pragma once

#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ris/tensor.hpp"

namespace ris {

// Handle to a value recorded on a Tape.
struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Every op pushes its output value plus a closure that
// propagates the output gradient back into the gradients of its inputs.
// Pushing happens in forward order, so walking the nodes in reverse id
// order is a reverse topological sweep. Gradients accumulate additively:
// a value consumed twice receives both contributions.
//
// A tape is confined to a single thread for one forward+backward pass.
// Saved activations are the tape's stored values themselves; closures only
// capture Var ids and whatever auxiliary state (argmax indices, matchings)
// the op needs.
template <typename T>
class Tape {
 public:
  using BackFn = std::function<void(Tape&, const Tensor<T>& gout)>;

  // NaN/Inf guard on every forward value. Off by default; the throw names
  // the offending op.
  bool check_finite = false;

  Var push(const char* op, Tensor<T> value, BackFn back = {}) {
    if (check_finite && !all_finite(value)) {
      throw std::runtime_error(std::string("non-finite value produced by op '") +
                               op + "'");
    }
    nodes_.push_back(Node{std::move(value), std::move(back), op});
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  Var leaf(Tensor<T> value) { return push("leaf", std::move(value)); }

  std::size_t size() const { return nodes_.size(); }

  // Id the next push will receive; lets an op's closure refer to its own
  // output value instead of copying it.
  Var next_id() const { return Var{static_cast<std::int32_t>(nodes_.size())}; }

  const Tensor<T>& val(Var v) const { return node_at(v).value; }

  const char* op_name(Var v) const { return node_at(v).op; }

  // Gradient of a node, allocated as zeros on first touch. Valid to call
  // after backward for any node; nodes the sweep never reached report zero.
  Tensor<T>& grad(Var v) {
    node_at(v);
    if (grads_.size() != nodes_.size()) grads_.resize(nodes_.size());
    Tensor<T>& g = grads_[static_cast<std::size_t>(v.id)];
    if (g.empty()) g = Tensor<T>(nodes_[static_cast<std::size_t>(v.id)].value.shape);
    return g;
  }

  void backward(Var loss) {
    if (!val(loss).is_scalar()) {
      throw std::invalid_argument("backward: loss must be a scalar tensor, got " +
                                  shape_str(val(loss).shape));
    }
    grad(loss)[0] += T(1);
    sweep();
  }

  // Backward from several outputs at once with caller-supplied gradients.
  void backward_seeded(const std::vector<std::pair<Var, Tensor<T>>>& seeds) {
    for (const auto& [v, g] : seeds) {
      if (g.shape != val(v).shape) {
        throw std::invalid_argument("backward_seeded: seed shape mismatch");
      }
      add_to(grad(v), g);
    }
    sweep();
  }

 private:
  struct Node {
    Tensor<T> value;
    BackFn back;
    const char* op;
  };

  const Node& node_at(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size()) {
      throw std::invalid_argument("tape: invalid var id " + std::to_string(v.id));
    }
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  void sweep() {
    if (grads_.size() != nodes_.size()) grads_.resize(nodes_.size());
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      // An empty grad slot means no consumer contributed anything; the
      // subtree upstream of this node cannot receive gradient either.
      if (grads_[i].empty() || !nodes_[i].back) continue;
      nodes_[i].back(*this, grads_[i]);
    }
  }

  // deques: pushing never invalidates references handed out by val()/grad()
  std::deque<Node> nodes_;
  std::deque<Tensor<T>> grads_;
};

}  // namespace ris
