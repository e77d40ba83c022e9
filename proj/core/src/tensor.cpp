#include "coseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace coseg {

std::int64_t shape_count(const Shape& shape) {
  std::int64_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

template <class S>
void check_finite_impl(std::span<const S> values, const char* what) {
  for (S v : values) {
    if (!std::isfinite(v)) {
      throw ValueError(std::string(what) + ": non-finite value encountered");
    }
  }
}

}  // namespace

void check_finite(std::span<const float> values, const char* what) {
  check_finite_impl(values, what);
}
void check_finite(std::span<const double> values, const char* what) {
  check_finite_impl(values, what);
}

template <class S>
TensorT<S> TensorT<S>::zeros(Shape shape, bool requires_grad) {
  auto node = std::make_shared<TensorNode<S>>();
  node->value.assign(static_cast<std::size_t>(shape_count(shape)), S(0));
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  if (requires_grad) node->ensure_grad();
  return wrap(std::move(node));
}

template <class S>
TensorT<S> TensorT<S>::full(Shape shape, S fill, bool requires_grad) {
  auto t = zeros(std::move(shape), requires_grad);
  std::fill(t.node()->value.begin(), t.node()->value.end(), fill);
  return t;
}

template <class S>
TensorT<S> TensorT<S>::from_data(Shape shape, std::vector<S> data, bool requires_grad) {
  std::int64_t n = shape_count(shape);
  if (n != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  check_finite(std::span<const S>(data), "from_data");
  auto node = std::make_shared<TensorNode<S>>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  if (requires_grad) node->ensure_grad();
  return wrap(std::move(node));
}

template <class S>
void backward(const TensorT<S>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward requires a scalar loss tensor");
  }
  TensorNode<S>* root = loss.node().get();
  if (!root->requires_grad) return;

  // Iterative post-order DFS; the reversed order is a topological order.
  std::vector<TensorNode<S>*> order;
  std::unordered_set<TensorNode<S>*> visited;
  struct Frame {
    TensorNode<S>* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  visited.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorNode<S>* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && visited.insert(p).second) {
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<S>* n = *it;
    if (n->backprop) {
      for (auto& p : n->parents) {
        if (p->requires_grad) p->ensure_grad();
      }
      n->backprop();
    }
  }
}

template struct TensorNode<float>;
template struct TensorNode<double>;
template class TensorT<float>;
template class TensorT<double>;
template void backward<float>(const TensorT<float>&);
template void backward<double>(const TensorT<double>&);

}  // namespace coseg
