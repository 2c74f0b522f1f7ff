#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pvcnet {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::size_t numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw Error("negative extent in shape");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

// Dense row-major tensor of doubles. Storage is shared between copies; a
// tensor handed to an op is never mutated afterwards, so copies taken for
// backward closures are reference bumps, not allocations. `node` links the
// tensor to the active tape (-1 = constant, no gradient path).
class Tensor {
 public:
  Tensor() : data_(std::make_shared<std::vector<double>>()) {}

  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(numel(shape_), 0.0)) {}

  Tensor(std::vector<int> shape, std::vector<double> values)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(std::move(values))) {
    if (data_->size() != numel(shape_))
      throw Error("value count " + std::to_string(data_->size()) +
                  " does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_->size(); }

  const double* data() const { return data_->data(); }
  const std::vector<double>& values() const { return *data_; }

  // Write access; detaches from shared storage first.
  double* mutable_data() {
    if (data_.use_count() > 1) data_ = std::make_shared<std::vector<double>>(*data_);
    return data_->data();
  }

  double operator[](std::size_t i) const { return (*data_)[i]; }

  double at(int b, int c, int l) const {
    return (*data_)[(static_cast<std::size_t>(b) * shape_[1] + c) * shape_[2] + l];
  }
  double at(int r, int c) const {
    return (*data_)[static_cast<std::size_t>(r) * shape_[1] + c];
  }

  double value() const {
    if (size() != 1) throw Error("expected a scalar tensor, got " + shape_str(shape_));
    return (*data_)[0];
  }

  // Same storage under a new shape (element count must match).
  Tensor reshaped(std::vector<int> shape) const {
    if (numel(shape) != size())
      throw Error("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  int node = -1;

 private:
  std::vector<int> shape_;
  std::shared_ptr<std::vector<double>> data_;
};

inline bool same_shape(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape();
}

}  // namespace pvcnet
