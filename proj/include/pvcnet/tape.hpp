#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "pvcnet/tensor.hpp"

namespace pvcnet {

class Tape;

// Receives the gradient of the loss w.r.t. this node's output and adds the
// chain-rule contributions into the parents' gradient buffers.
using BackwardFn = std::function<void(const std::vector<double>&, Tape&)>;

// Wengert list. Nodes are appended in forward order, so every node's parents
// have smaller ids and one reverse sweep visits each entry exactly once.
class Tape {
 public:
  int leaf(std::size_t size) { return add(size, {}, nullptr); }

  // Copy of t linked to a fresh leaf; grads become readable after backward().
  Tensor watch(const Tensor& t) {
    Tensor c = t;
    c.node = leaf(t.size());
    return c;
  }

  int record(std::size_t size, std::vector<int> parents, BackwardFn fn) {
    return add(size, std::move(parents), std::move(fn));
  }

  void backward(const Tensor& loss) {
    if (loss.node < 0 || static_cast<std::size_t>(loss.node) >= nodes_.size())
      throw Error("backward: loss tensor is not on this tape");
    if (nodes_[loss.node].size != 1)
      throw Error("backward: loss must be a scalar, node has " +
                  std::to_string(nodes_[loss.node].size) + " elements");
    for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0);
    std::fill(touched_.begin(), touched_.end(), false);
    grads_[loss.node][0] = 1.0;
    touched_[loss.node] = true;
    for (int i = loss.node; i >= 0; --i) {
      if (touched_[i] && nodes_[i].backward) nodes_[i].backward(grads_[i], *this);
    }
  }

  // Gradient buffer of a node; marks it for the reverse sweep.
  std::vector<double>& grad_buf(int node) {
    touched_[node] = true;
    return grads_[node];
  }

  const std::vector<double>& grad(int node) const { return grads_.at(node); }

  std::size_t node_count() const { return nodes_.size(); }

  void reset() {
    nodes_.clear();
    grads_.clear();
    touched_.clear();
  }

 private:
  struct Node {
    std::size_t size;
    std::vector<int> parents;
    BackwardFn backward;
  };

  int add(std::size_t size, std::vector<int> parents, BackwardFn fn) {
    nodes_.push_back({size, std::move(parents), std::move(fn)});
    grads_.emplace_back(size, 0.0);
    touched_.push_back(false);
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::vector<char> touched_;
};

}  // namespace pvcnet
