#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "coseg/rng.hpp"
#include "coseg/tensor.hpp"

namespace coseg {

// Named parameter collection with stable insertion order. The order defines
// the checkpoint layout and the optimizer's update sequence.
template <class S>
class ParamStoreT {
 public:
  TensorT<S>& add(const std::string& name, TensorT<S> tensor);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  TensorT<S>& get(const std::string& name);
  const TensorT<S>& get(const std::string& name) const;

  const std::vector<std::pair<std::string, TensorT<S>>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, TensorT<S>>>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  void zero_grads();
  std::int64_t parameter_count() const;

 private:
  std::vector<std::pair<std::string, TensorT<S>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ParamStore = ParamStoreT<float>;

// Glorot/Xavier uniform initialization: U(-a, a) with a = sqrt(6/(fan_in+fan_out)).
template <class S>
TensorT<S> glorot_uniform(Shape shape, int fan_in, int fan_out, Pcg32& rng);

extern template class ParamStoreT<float>;
extern template class ParamStoreT<double>;
extern template TensorT<float> glorot_uniform<float>(Shape, int, int, Pcg32&);
extern template TensorT<double> glorot_uniform<double>(Shape, int, int, Pcg32&);

}  // namespace coseg
