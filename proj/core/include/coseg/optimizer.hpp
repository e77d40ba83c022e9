#pragma once

#include "coseg/params.hpp"

namespace coseg {

// SGD with Polyak heavy-ball momentum:
//   v <- momentum * v - lr * g
//   w <- w + v
template <class S>
class SgdMomentumT {
 public:
  SgdMomentumT(S learning_rate, S momentum);

  // Allocates zero velocity buffers matching the store's parameters.
  void attach(const ParamStoreT<S>& params);

  // One update over every parameter; throws if a gradient buffer is missing.
  void step(ParamStoreT<S>& params);

  S learning_rate() const { return lr_; }
  S momentum() const { return momentum_; }

  std::vector<std::vector<S>>& velocities() { return velocities_; }
  const std::vector<std::vector<S>>& velocities() const { return velocities_; }

 private:
  S lr_;
  S momentum_;
  std::vector<std::vector<S>> velocities_;
};

using SgdMomentum = SgdMomentumT<float>;

extern template class SgdMomentumT<float>;
extern template class SgdMomentumT<double>;

}  // namespace coseg
