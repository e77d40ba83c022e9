#include "coseg/optimizer.hpp"

namespace coseg {

template <class S>
SgdMomentumT<S>::SgdMomentumT(S learning_rate, S momentum)
    : lr_(learning_rate), momentum_(momentum) {
  if (!(learning_rate >= S(0))) throw ConfigError("learning rate must be >= 0");
  if (!(momentum >= S(0) && momentum < S(1))) throw ConfigError("momentum must be in [0,1)");
}

template <class S>
void SgdMomentumT<S>::attach(const ParamStoreT<S>& params) {
  velocities_.clear();
  velocities_.reserve(params.size());
  for (const auto& [name, t] : params.entries()) {
    velocities_.emplace_back(t.size(), S(0));
  }
}

template <class S>
void SgdMomentumT<S>::step(ParamStoreT<S>& params) {
  if (velocities_.size() != params.size()) {
    throw ConfigError("optimizer not attached to this parameter store");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& [name, t] = params.entries()[p];
    if (t.grad().empty()) throw ValueError("missing gradient for parameter " + name);
    auto w = t.values_mut();
    auto g = t.grad();
    auto& v = velocities_[p];
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = momentum_ * v[i] - lr_ * g[i];
      w[i] += v[i];
    }
  }
}

template class SgdMomentumT<float>;
template class SgdMomentumT<double>;

}  // namespace coseg
