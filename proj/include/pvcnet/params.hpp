#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "pvcnet/tensor.hpp"

namespace pvcnet {

struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;
};

// Named parameter collection. Enumeration order is lexicographic by name and
// fixed after finalize(); checkpoints and optimizer state rely on it.
class ParamStore {
 public:
  void add(std::string name, Tensor value, bool trainable = true) {
    if (finalized_) throw Error("ParamStore: cannot add after finalize");
    params_.push_back({std::move(name), std::move(value), trainable});
  }

  void finalize() {
    std::sort(params_.begin(), params_.end(),
              [](const Parameter& a, const Parameter& b) { return a.name < b.name; });
    for (std::size_t i = 1; i < params_.size(); ++i)
      if (params_[i].name == params_[i - 1].name)
        throw Error("ParamStore: duplicate parameter name " + params_[i].name);
    finalized_ = true;
  }

  int index_of(const std::string& name) const {
    auto it = std::lower_bound(params_.begin(), params_.end(), name,
                               [](const Parameter& p, const std::string& n) { return p.name < n; });
    if (it == params_.end() || it->name != name)
      throw Error("ParamStore: unknown parameter " + name);
    return static_cast<int>(it - params_.begin());
  }

  Parameter& operator[](int i) { return params_[i]; }
  const Parameter& operator[](int i) const { return params_[i]; }
  std::size_t count() const { return params_.size(); }

  long long trainable_scalars() const {
    long long n = 0;
    for (const Parameter& p : params_)
      if (p.trainable) n += static_cast<long long>(p.value.size());
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
  bool finalized_ = false;
};

}  // namespace pvcnet
