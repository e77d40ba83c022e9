#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "coseg/errors.hpp"

namespace coseg {

// Extents, outermost first. Rank <= 4; image tensors are channel x height x
// width, conv kernels are out_ch x in_ch x kh x kw.
using Shape = std::vector<int>;

std::int64_t shape_count(const Shape& shape);
std::string shape_str(const Shape& shape);

template <class S>
struct TensorNode {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // empty unless allocated; same length as value when present
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<S>>> parents;
  std::function<void()> backprop;  // pulls this->grad into the parents' grads

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

// Shared handle to a node of the compute graph. Copies alias the same
// storage; the graph stays alive as long as a handle to its sink does.
template <class S>
class TensorT {
 public:
  TensorT() = default;

  static TensorT zeros(Shape shape, bool requires_grad = false);
  static TensorT full(Shape shape, S fill, bool requires_grad = false);
  // Validates length and finiteness of the provided data.
  static TensorT from_data(Shape shape, std::vector<S> data, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->value.size()); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const S> values() const { return node_->value; }
  // Direct mutation is reserved for leaves (initialization, optimizer steps).
  std::span<S> values_mut() { return node_->value; }

  std::span<const S> grad() const { return node_->grad; }
  std::span<S> grad_mut() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    node_->ensure_grad();
    std::fill(node_->grad.begin(), node_->grad.end(), S(0));
  }

  // Value of a single-element tensor.
  S item() const {
    if (size() != 1) throw ShapeError("item() on tensor of size " + std::to_string(size()));
    return node_->value[0];
  }

  std::shared_ptr<TensorNode<S>>& node() { return node_; }
  const std::shared_ptr<TensorNode<S>>& node() const { return node_; }
  static TensorT wrap(std::shared_ptr<TensorNode<S>> node) {
    TensorT t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<TensorNode<S>> node_;
};

// Runs reverse-mode differentiation from a scalar loss. Every reachable
// requires_grad tensor accumulates dLoss/dTensor; a tensor feeding several
// consumers receives the sum of their contributions.
template <class S>
void backward(const TensorT<S>& loss);

void check_finite(std::span<const float> values, const char* what);
void check_finite(std::span<const double> values, const char* what);

using Tensor = TensorT<float>;

extern template struct TensorNode<float>;
extern template struct TensorNode<double>;
extern template class TensorT<float>;
extern template class TensorT<double>;
extern template void backward<float>(const TensorT<float>&);
extern template void backward<double>(const TensorT<double>&);

}  // namespace coseg
