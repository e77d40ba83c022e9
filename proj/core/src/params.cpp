#include "coseg/params.hpp"

#include <cmath>

namespace coseg {

template <class S>
TensorT<S>& ParamStoreT<S>::add(const std::string& name, TensorT<S> tensor) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  index_[name] = entries_.size();
  entries_.emplace_back(name, std::move(tensor));
  return entries_.back().second;
}

template <class S>
TensorT<S>& ParamStoreT<S>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return entries_[it->second].second;
}

template <class S>
const TensorT<S>& ParamStoreT<S>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return entries_[it->second].second;
}

template <class S>
void ParamStoreT<S>::zero_grads() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

template <class S>
std::int64_t ParamStoreT<S>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

template <class S>
TensorT<S> glorot_uniform(Shape shape, int fan_in, int fan_out, Pcg32& rng) {
  double limit = std::sqrt(6.0 / (static_cast<double>(fan_in) + fan_out));
  auto t = TensorT<S>::zeros(std::move(shape), true);
  for (S& v : t.values_mut()) {
    v = static_cast<S>(rng.uniform(-limit, limit));
  }
  return t;
}

template class ParamStoreT<float>;
template class ParamStoreT<double>;
template TensorT<float> glorot_uniform<float>(Shape, int, int, Pcg32&);
template TensorT<double> glorot_uniform<double>(Shape, int, int, Pcg32&);

}  // namespace coseg
