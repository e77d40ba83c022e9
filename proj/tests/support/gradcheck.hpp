#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "coseg/tensor.hpp"

namespace coseg::testing {

// Central-difference gradient verification against reverse-mode autodiff.
//
// Acceptance convention: a tensor passes when the normwise relative error
// ||g_fd - g_ad|| / max(||g_fd||, ||g_ad||) stays within rtol AND every
// element satisfies |fd - ad| <= atol + rtol * max(|fd|, |ad|). The step for
// the float32-calibrated tolerance is 1e-3.
struct GradCheckResult {
  double norm_rel_err = 0.0;   // worst normwise relative error over all tensors
  double elem_excess = 0.0;    // worst (|fd-ad| - (atol + rtol*max)) over all elements
  std::string worst;           // description of the worst element
  bool passed(double) const { return norm_rel_err <= limit_rtol && elem_excess <= 0.0; }
  bool ok() const { return norm_rel_err <= limit_rtol && elem_excess <= 0.0; }
  double limit_rtol = 1e-3;
};

// A failing element is re-measured at step/10 and step/100 before it counts:
// a kink (relu, max-pool argmax) straddled by the bracket cleans up as the
// step shrinks, while a genuine autodiff defect persists at every step.
template <class S, class MakeLoss>
GradCheckResult check_gradients(std::vector<TensorT<S>*> inputs, MakeLoss make_loss,
                                double step = 1e-3, double rtol = 1e-3,
                                double atol = 1e-4) {
  GradCheckResult result;
  result.limit_rtol = rtol;

  for (TensorT<S>* t : inputs) t->zero_grad();
  {
    TensorT<S> loss = make_loss();
    backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (TensorT<S>* t : inputs) {
    analytic.emplace_back(t->grad().begin(), t->grad().end());
  }

  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    TensorT<S>& t = *inputs[ti];
    double norm_diff2 = 0.0, norm_fd2 = 0.0, norm_ad2 = 0.0;
    auto vals = t.values_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const S original = vals[i];
      double ad = analytic[ti][i];
      double fd = 0.0, diff = 0.0, bound = 0.0;
      double h = step;
      for (int attempt = 0; attempt < 3; ++attempt) {
        vals[i] = original + static_cast<S>(h);
        double up = static_cast<double>(make_loss().item());
        vals[i] = original - static_cast<S>(h);
        double down = static_cast<double>(make_loss().item());
        vals[i] = original;
        fd = (up - down) / (2.0 * h);
        diff = std::abs(fd - ad);
        bound = atol + rtol * std::max(std::abs(fd), std::abs(ad));
        if (diff <= bound) break;
        h /= 10.0;
      }
      norm_diff2 += diff * diff;
      norm_fd2 += fd * fd;
      norm_ad2 += ad * ad;
      if (diff - bound > result.elem_excess) {
        result.elem_excess = diff - bound;
        result.worst = "tensor " + std::to_string(ti) + " elem " + std::to_string(i) +
                       ": fd=" + std::to_string(fd) + " ad=" + std::to_string(ad);
      }
    }
    double denom = std::max(std::sqrt(std::max(norm_fd2, norm_ad2)), 1e-12);
    double rel = std::sqrt(norm_diff2) / denom;
    if (norm_fd2 == 0.0 && norm_ad2 == 0.0) rel = 0.0;
    result.norm_rel_err = std::max(result.norm_rel_err, rel);
  }
  return result;
}

}  // namespace coseg::testing
