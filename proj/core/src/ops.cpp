#include "coseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace coseg {

namespace {

template <class S>
std::shared_ptr<TensorNode<S>> make_node(Shape shape,
                                         std::initializer_list<TensorT<S>> parents) {
  auto node = std::make_shared<TensorNode<S>>();
  node->value.assign(static_cast<std::size_t>(shape_count(shape)), S(0));
  node->shape = std::move(shape);
  for (const auto& p : parents) {
    node->parents.push_back(p.node());
    node->requires_grad = node->requires_grad || p.node()->requires_grad;
  }
  return node;
}

template <class S>
std::shared_ptr<TensorNode<S>> make_node(Shape shape, std::span<const TensorT<S>> parents) {
  auto node = std::make_shared<TensorNode<S>>();
  node->value.assign(static_cast<std::size_t>(shape_count(shape)), S(0));
  node->shape = std::move(shape);
  for (const auto& p : parents) {
    node->parents.push_back(p.node());
    node->requires_grad = node->requires_grad || p.node()->requires_grad;
  }
  return node;
}

void require_rank(const Shape& s, int rank, const char* what) {
  if (static_cast<int>(s.size()) != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_str(s));
  }
}

// ---------------------------------------------------------------------------
// GEMM kernels. Row-major, single-threaded; every accumulation runs in a
// fixed order, so results are bitwise reproducible run to run.
// ---------------------------------------------------------------------------

// C[M x N] (+)= A[M x K] * B[K x N]
template <class S>
void gemm_nn(std::int64_t M, std::int64_t K, std::int64_t N, const S* A, const S* B,
             S* C, bool accumulate) {
  for (std::int64_t i = 0; i < M; ++i) {
    S* crow = C + i * N;
    if (!accumulate) std::fill(crow, crow + N, S(0));
    const S* arow = A + i * K;
    for (std::int64_t k = 0; k < K; ++k) {
      S a = arow[k];
      const S* brow = B + k * N;
      for (std::int64_t j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

// C[M x P] += A[M x N] * B[P x N]^T  (rows of A dotted with rows of B)
template <class S>
void gemm_nt_acc(std::int64_t M, std::int64_t N, std::int64_t P, const S* A, const S* B,
                 S* C) {
  for (std::int64_t i = 0; i < M; ++i) {
    const S* arow = A + i * N;
    S* crow = C + i * P;
    for (std::int64_t r = 0; r < P; ++r) {
      const S* brow = B + r * N;
      S acc = S(0);
      // simd reduction: the dot would otherwise stay scalar (float
      // reassociation needs explicit permission)
#pragma omp simd reduction(+ : acc)
      for (std::int64_t j = 0; j < N; ++j) acc += arow[j] * brow[j];
      crow[r] += acc;
    }
  }
}

// C[K x N] = A[M x K]^T * B[M x N]
template <class S>
void gemm_tn(std::int64_t M, std::int64_t K, std::int64_t N, const S* A, const S* B,
             S* C) {
  for (std::int64_t k = 0; k < K; ++k) {
    S* crow = C + k * N;
    std::fill(crow, crow + N, S(0));
    for (std::int64_t m = 0; m < M; ++m) {
      S a = A[m * K + k];
      const S* brow = B + m * N;
      for (std::int64_t j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

// ---------------------------------------------------------------------------
// im2col / col2im
// ---------------------------------------------------------------------------

template <class S>
void im2col(const S* in, int C, int H, int W, int KH, int KW, int stride, int pad,
            int OH, int OW, S* col) {
  const std::int64_t N = static_cast<std::int64_t>(OH) * OW;
  std::int64_t r = 0;
  for (int ic = 0; ic < C; ++ic) {
    for (int ky = 0; ky < KH; ++ky) {
      for (int kx = 0; kx < KW; ++kx, ++r) {
        S* dst = col + r * N;
        for (int oy = 0; oy < OH; ++oy) {
          int iy = oy * stride + ky - pad;
          S* drow = dst + static_cast<std::int64_t>(oy) * OW;
          if (iy < 0 || iy >= H) {
            std::fill(drow, drow + OW, S(0));
            continue;
          }
          const S* srow = in + (static_cast<std::int64_t>(ic) * H + iy) * W;
          for (int ox = 0; ox < OW; ++ox) {
            int ix = ox * stride + kx - pad;
            drow[ox] = (ix >= 0 && ix < W) ? srow[ix] : S(0);
          }
        }
      }
    }
  }
}

template <class S>
void col2im_acc(const S* col, int C, int H, int W, int KH, int KW, int stride, int pad,
                int OH, int OW, S* din) {
  const std::int64_t N = static_cast<std::int64_t>(OH) * OW;
  std::int64_t r = 0;
  for (int ic = 0; ic < C; ++ic) {
    for (int ky = 0; ky < KH; ++ky) {
      for (int kx = 0; kx < KW; ++kx, ++r) {
        const S* src = col + r * N;
        for (int oy = 0; oy < OH; ++oy) {
          int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) continue;
          S* drow = din + (static_cast<std::int64_t>(ic) * H + iy) * W;
          const S* srow = src + static_cast<std::int64_t>(oy) * OW;
          for (int ox = 0; ox < OW; ++ox) {
            int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < W) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

template <class S>
std::vector<S>& scratch_buffer(int which) {
  thread_local std::vector<S> buffers[2];
  return buffers[which];
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> conv2d(const TensorT<S>& input, const TensorT<S>& kernel,
                  const TensorT<S>& bias, int stride, int padding) {
  require_rank(input.shape(), 3, "conv2d input");
  require_rank(kernel.shape(), 4, "conv2d kernel");
  require_rank(bias.shape(), 1, "conv2d bias");
  const int C = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
  const int OC = kernel.shape()[0], IC = kernel.shape()[1];
  const int KH = kernel.shape()[2], KW = kernel.shape()[3];
  if (IC != C) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(IC) + " channels, input has " +
                     std::to_string(C));
  }
  if (bias.shape()[0] != OC) throw ShapeError("conv2d: bias length does not match out channels");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (padding < 0) throw ShapeError("conv2d: padding must be >= 0");
  const int OH = (H + 2 * padding - KH) / stride + 1;
  const int OW = (W + 2 * padding - KW) / stride + 1;
  if (H + 2 * padding < KH || W + 2 * padding < KW || OH < 1 || OW < 1) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  check_finite(input.values(), "conv2d input");
  check_finite(kernel.values(), "conv2d kernel");
  check_finite(bias.values(), "conv2d bias");

  const std::int64_t K = static_cast<std::int64_t>(C) * KH * KW;
  const std::int64_t N = static_cast<std::int64_t>(OH) * OW;

  auto node = make_node<S>({OC, OH, OW}, {input, kernel, bias});
  {
    std::vector<S>& col = scratch_buffer<S>(0);
    col.resize(static_cast<std::size_t>(K * N));
    im2col(input.values().data(), C, H, W, KH, KW, stride, padding, OH, OW, col.data());
    gemm_nn<S>(OC, K, N, kernel.values().data(), col.data(), node->value.data(), false);
    const S* b = bias.values().data();
    for (int oc = 0; oc < OC; ++oc) {
      S* row = node->value.data() + static_cast<std::int64_t>(oc) * N;
      for (std::int64_t j = 0; j < N; ++j) row[j] += b[oc];
    }
  }

  if (node->requires_grad) {
    TensorNode<S>* out = node.get();
    TensorNode<S>* in = input.node().get();
    TensorNode<S>* ker = kernel.node().get();
    TensorNode<S>* bi = bias.node().get();
    node->backprop = [out, in, ker, bi, C, H, W, OC, KH, KW, stride, padding, OH, OW, K,
                      N]() {
      const S* g = out->grad.data();
      if (bi->requires_grad) {
        for (int oc = 0; oc < OC; ++oc) {
          S acc = S(0);
          const S* row = g + static_cast<std::int64_t>(oc) * N;
          for (std::int64_t j = 0; j < N; ++j) acc += row[j];
          bi->grad[oc] += acc;
        }
      }
      if (ker->requires_grad || in->requires_grad) {
        std::vector<S>& col = scratch_buffer<S>(0);
        col.resize(static_cast<std::size_t>(K * N));
        im2col(in->value.data(), C, H, W, KH, KW, stride, padding, OH, OW, col.data());
        if (ker->requires_grad) {
          gemm_nt_acc<S>(OC, N, K, g, col.data(), ker->grad.data());
        }
        if (in->requires_grad) {
          std::vector<S>& dcol = scratch_buffer<S>(1);
          dcol.resize(static_cast<std::size_t>(K * N));
          gemm_tn<S>(OC, K, N, ker->value.data(), g, dcol.data());
          col2im_acc(dcol.data(), C, H, W, KH, KW, stride, padding, OH, OW,
                     in->grad.data());
        }
      }
    };
  }
  return TensorT<S>::wrap(std::move(node));
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> linear(const TensorT<S>& input, const TensorT<S>& weights,
                  const TensorT<S>& bias) {
  require_rank(input.shape(), 1, "linear input");
  require_rank(weights.shape(), 2, "linear weights");
  require_rank(bias.shape(), 1, "linear bias");
  const int M = weights.shape()[0], N = weights.shape()[1];
  if (input.shape()[0] != N) {
    throw ShapeError("linear: weights expect input length " + std::to_string(N) + ", got " +
                     std::to_string(input.shape()[0]));
  }
  if (bias.shape()[0] != M) throw ShapeError("linear: bias length does not match output");

  auto node = make_node<S>({M}, {input, weights, bias});
  const S* x = input.values().data();
  const S* w = weights.values().data();
  const S* b = bias.values().data();
  for (int i = 0; i < M; ++i) {
    S acc = b[i];
    const S* wrow = w + static_cast<std::int64_t>(i) * N;
    for (int j = 0; j < N; ++j) acc += wrow[j] * x[j];
    node->value[i] = acc;
  }

  if (node->requires_grad) {
    TensorNode<S>* out = node.get();
    TensorNode<S>* in = input.node().get();
    TensorNode<S>* wn = weights.node().get();
    TensorNode<S>* bn = bias.node().get();
    node->backprop = [out, in, wn, bn, M, N]() {
      const S* g = out->grad.data();
      if (bn->requires_grad) {
        for (int i = 0; i < M; ++i) bn->grad[i] += g[i];
      }
      if (wn->requires_grad) {
        for (int i = 0; i < M; ++i) {
          S gi = g[i];
          S* grow = wn->grad.data() + static_cast<std::int64_t>(i) * N;
          const S* x = in->value.data();
          for (int j = 0; j < N; ++j) grow[j] += gi * x[j];
        }
      }
      if (in->requires_grad) {
        for (int i = 0; i < M; ++i) {
          S gi = g[i];
          const S* wrow = wn->value.data() + static_cast<std::int64_t>(i) * N;
          for (int j = 0; j < N; ++j) in->grad[j] += gi * wrow[j];
        }
      }
    };
  }
  return TensorT<S>::wrap(std::move(node));
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> pool_spatial_global(const TensorT<S>& input, PoolMode mode) {
  require_rank(input.shape(), 3, "pool_spatial_global input");
  const int C = input.shape()[0];
  const std::int64_t plane = static_cast<std::int64_t>(input.shape()[1]) * input.shape()[2];

  auto node = make_node<S>({C, 1, 1}, {input});
  const S* x = input.values().data();
  std::vector<std::int64_t> argmax(mode == PoolMode::kMax ? C : 0);
  for (int c = 0; c < C; ++c) {
    const S* p = x + c * plane;
    if (mode == PoolMode::kAvg) {
      double acc = 0;
      for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
      node->value[c] = static_cast<S>(acc / static_cast<double>(plane));
    } else {
      std::int64_t best = 0;
      for (std::int64_t i = 1; i < plane; ++i) {
        if (p[i] > p[best]) best = i;
      }
      node->value[c] = p[best];
      argmax[c] = best;
    }
  }

  if (node->requires_grad) {
    TensorNode<S>* out = node.get();
    TensorNode<S>* in = input.node().get();
    node->backprop = [out, in, C, plane, mode, argmax = std::move(argmax)]() {
      const S* g = out->grad.data();
      if (mode == PoolMode::kAvg) {
        const S inv = S(1) / static_cast<S>(plane);
        for (int c = 0; c < C; ++c) {
          S gc = g[c] * inv;
          S* grow = in->grad.data() + c * plane;
          for (std::int64_t i = 0; i < plane; ++i) grow[i] += gc;
        }
      } else {
        for (int c = 0; c < C; ++c) in->grad[c * plane + argmax[c]] += g[c];
      }
    };
  }
  return TensorT<S>::wrap(std::move(node));
}

template <class S>
TensorT<S> pool_spatial_2x2(const TensorT<S>& input, PoolMode mode) {
  require_rank(input.shape(), 3, "pool_spatial_2x2 input");
  const int C = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
  if (H % 2 != 0 || W % 2 != 0) {
    throw ShapeError("pool_spatial_2x2: spatial extents must be even, got " +
                     shape_str(input.shape()));
  }
  const int OH = H / 2, OW = W / 2;

  auto node = make_node<S>({C, OH, OW}, {input});
  const S* x = input.values().data();
  std::vector<std::int64_t> argmax(mode == PoolMode::kMax ? node->value.size() : 0);
  std::int64_t o = 0;
  for (int c = 0; c < C; ++c) {
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox, ++o) {
        std::int64_t base = (static_cast<std::int64_t>(c) * H + 2 * oy) * W + 2 * ox;
        std::int64_t idx[4] = {base, base + 1, base + W, base + W + 1};
        if (mode == PoolMode::kAvg) {
          node->value[o] =
              static_cast<S>((static_cast<double>(x[idx[0]]) + x[idx[1]] + x[idx[2]] +
                              x[idx[3]]) / 4.0);
        } else {
          std::int64_t best = idx[0];
          for (int t = 1; t < 4; ++t) {
            if (x[idx[t]] > x[best]) best = idx[t];
          }
          node->value[o] = x[best];
          argmax[o] = best;
        }
      }
    }
  }

  if (node->requires_grad) {
    TensorNode<S>* out = node.get();
    TensorNode<S>* in = input.node().get();
    node->backprop = [out, in, C, H, W, OH, OW, mode, argmax = std::move(argmax)]() {
      const S* g = out->grad.data();
      if (mode == PoolMode::kAvg) {
        std::int64_t o = 0;
        for (int c = 0; c < C; ++c) {
          for (int oy = 0; oy < OH; ++oy) {
            for (int ox = 0; ox < OW; ++ox, ++o) {
              S gq = g[o] / S(4);
              std::int64_t base = (static_cast<std::int64_t>(c) * H + 2 * oy) * W + 2 * ox;
              in->grad[base] += gq;
              in->grad[base + 1] += gq;
              in->grad[base + W] += gq;
              in->grad[base + W + 1] += gq;
            }
          }
        }
      } else {
        for (std::size_t o = 0; o < out->grad.size(); ++o) in->grad[argmax[o]] += g[o];
      }
    };
  }
  return TensorT<S>::wrap(std::move(node));
}

template <class S>
TensorT<S> pool_channel(const TensorT<S>& input, PoolMode mode) {
  require_rank(input.shape(), 3, "pool_channel input");
  const int C = input.shape()[0];
  const std::int64_t plane = static_cast<std::int64_t>(input.shape()[1]) * input.shape()[2];

  auto node = make_node<S>({1, input.shape()[1], input.shape()[2]}, {input});
  const S* x = input.values().data();
  std::vector<int> argmax(mode == PoolMode::kMax ? plane : 0);
  for (std::int64_t i = 0; i < plane; ++i) {
    if (mode == PoolMode::kAvg) {
      double acc = 0;
      for (int c = 0; c < C; ++c) acc += x[c * plane + i];
      node->value[i] = static_cast<S>(acc / C);
    } else {
      int best = 0;
      for (int c = 1; c < C; ++c) {
        if (x[c * plane + i] > x[best * plane + i]) best = c;
      }
      node->value[i] = x[best * plane + i];
      argmax[i] = best;
    }
  }

  if (node->requires_grad) {
    TensorNode<S>* out = node.get();
    TensorNode<S>* in = input.node().get();
    node->backprop = [out, in, C, plane, mode, argmax = std::move(argmax)]() {
      const S* g = out->grad.data();
      if (mode == PoolMode::kAvg) {
        const S inv = S(1) / static_cast<S>(C);
        for (std::int64_t i = 0; i < plane; ++i) {
          S gi = g[i] * inv;
          for (int c = 0; c < C; ++c) in->grad[c * plane + i] += gi;
        }
      } else {
        for (std::int64_t i = 0; i < plane; ++i) in->grad[argmax[i] * plane + i] += g[i];
      }
    };
  }
  return TensorT<S>::wrap(std::move(node));
}

// ---------------------------------------------------------------------------
// upsample
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> upsample_nearest2x(const TensorT<S>& input) {
  require_rank(input.shape(), 3, "upsample_nearest2x input");
  const int C = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
  auto node = make_node<S>({C, 2 * H, 2 * W}, {input});
  const S* x = input.values().data();
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < 2 * H; ++y) {
      const S* srow = x + (static_cast<std::int64_t>(c) * H + y / 2) * W;
      S* drow = node->value.data() + (static_cast<std::int64_t>(c) * 2 * H + y) * 2 * W;
      for (int xo = 0; xo < 2 * W; ++xo) drow[xo] = srow[xo / 2];
    }
  }

  if (node->requires_grad) {
    TensorNode<S>* out = node.get();
    TensorNode<S>* in = input.node().get();
    node->backprop = [out, in, C, H, W]() {
      const S* g = out->grad.data();
      for (int c = 0; c < C; ++c) {
        for (int y = 0; y < 2 * H; ++y) {
          const S* grow = g + (static_cast<std::int64_t>(c) * 2 * H + y) * 2 * W;
          S* drow = in->grad.data() + (static_cast<std::int64_t>(c) * H + y / 2) * W;
          for (int xo = 0; xo < 2 * W; ++xo) drow[xo / 2] += grow[xo];
        }
      }
    };
  }
  return TensorT<S>::wrap(std::move(node));
}

// ---------------------------------------------------------------------------
// elementwise unary
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> relu(const TensorT<S>& input) {
  auto node = make_node<S>(input.shape(), {input});
  const S* x = input.values().data();
  for (std::size_t i = 0; i < node->value.size(); ++i) node->value[i] = x[i] > S(0) ? x[i] : S(0);
  if (node->requires_grad) {
    TensorNode<S>* out = node.get();
    TensorNode<S>* in = input.node().get();
    node->backprop = [out, in]() {
      for (std::size_t i = 0; i < out->grad.size(); ++i) {
        if (in->value[i] > S(0)) in->grad[i] += out->grad[i];
      }
    };
  }
  return TensorT<S>::wrap(std::move(node));
}

template <class S>
TensorT<S> sigmoid(const TensorT<S>& input) {
  const S lo = static_cast<S>(kProbEps);
  const S hi = S(1) - static_cast<S>(kProbEps);
  auto node = make_node<S>(input.shape(), {input});
  const S* x = input.values().data();
  for (std::size_t i = 0; i < node->value.size(); ++i) {
    S v;
    if (x[i] >= S(0)) {
      v = S(1) / (S(1) + std::exp(-x[i]));
    } else {
      S e = std::exp(x[i]);
      v = e / (S(1) + e);
    }
    node->value[i] = std::min(hi, std::max(lo, v));
  }
  if (node->requires_grad) {
    TensorNode<S>* out = node.get();
    TensorNode<S>* in = input.node().get();
    node->backprop = [out, in]() {
      for (std::size_t i = 0; i < out->grad.size(); ++i) {
        S v = out->value[i];
        in->grad[i] += out->grad[i] * v * (S(1) - v);
      }
    };
  }
  return TensorT<S>::wrap(std::move(node));
}

template <class S>
TensorT<S> exp(const TensorT<S>& input) {
  auto node = make_node<S>(input.shape(), {input});
  const S* x = input.values().data();
  for (std::size_t i = 0; i < node->value.size(); ++i) node->value[i] = std::exp(x[i]);
  if (node->requires_grad) {
    TensorNode<S>* out = node.get();
    TensorNode<S>* in = input.node().get();
    node->backprop = [out, in]() {
      for (std::size_t i = 0; i < out->grad.size(); ++i) {
        in->grad[i] += out->grad[i] * out->value[i];
      }
    };
  }
  return TensorT<S>::wrap(std::move(node));
}

template <class S>
TensorT<S> log(const TensorT<S>& input) {
  const S eps = static_cast<S>(kProbEps);
  auto node = make_node<S>(input.shape(), {input});
  const S* x = input.values().data();
  for (std::size_t i = 0; i < node->value.size(); ++i) {
    node->value[i] = std::log(std::max(eps, x[i]));
  }
  if (node->requires_grad) {
    TensorNode<S>* out = node.get();
    TensorNode<S>* in = input.node().get();
    node->backprop = [out, in, eps]() {
      for (std::size_t i = 0; i < out->grad.size(); ++i) {
        if (in->value[i] >= eps) in->grad[i] += out->grad[i] / in->value[i];
      }
    };
  }
  return TensorT<S>::wrap(std::move(node));
}

template <class S>
TensorT<S> clamp(const TensorT<S>& input, S lo, S hi) {
  if (lo > hi) throw ShapeError("clamp: lo > hi");
  auto node = make_node<S>(input.shape(), {input});
  const S* x = input.values().data();
  for (std::size_t i = 0; i < node->value.size(); ++i) {
    node->value[i] = std::min(hi, std::max(lo, x[i]));
  }
  if (node->requires_grad) {
    TensorNode<S>* out = node.get();
    TensorNode<S>* in = input.node().get();
    node->backprop = [out, in, lo, hi]() {
      for (std::size_t i = 0; i < out->grad.size(); ++i) {
        if (in->value[i] >= lo && in->value[i] <= hi) in->grad[i] += out->grad[i];
      }
    };
  }
  return TensorT<S>::wrap(std::move(node));
}

template <class S>
TensorT<S> scale(const TensorT<S>& input, S factor) {
  auto node = make_node<S>(input.shape(), {input});
  const S* x = input.values().data();
  for (std::size_t i = 0; i < node->value.size(); ++i) node->value[i] = factor * x[i];
  if (node->requires_grad) {
    TensorNode<S>* out = node.get();
    TensorNode<S>* in = input.node().get();
    node->backprop = [out, in, factor]() {
      for (std::size_t i = 0; i < out->grad.size(); ++i) in->grad[i] += factor * out->grad[i];
    };
  }
  return TensorT<S>::wrap(std::move(node));
}

// ---------------------------------------------------------------------------
// broadcasting binary ops
// ---------------------------------------------------------------------------

namespace {

struct BcastPlan {
  Shape out;
  // Extents padded to rank 4 with leading 1s; strides are 0 on broadcast axes.
  std::int64_t ext[4] = {1, 1, 1, 1};
  std::int64_t sa[4] = {0, 0, 0, 0};
  std::int64_t sb[4] = {0, 0, 0, 0};
  bool same_shape = false;
};

BcastPlan broadcast_plan(const Shape& a, const Shape& b, const char* what) {
  if (a.size() > 4 || b.size() > 4) {
    throw ShapeError(std::string(what) + ": rank > 4 unsupported");
  }
  BcastPlan plan;
  plan.same_shape = (a == b);
  const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  const int rank = std::max(ra, rb);
  Shape out(rank, 1);
  std::int64_t ea[4] = {1, 1, 1, 1}, eb[4] = {1, 1, 1, 1};
  for (int i = 0; i < rank; ++i) {
    int da = (i >= rank - ra) ? a[i - (rank - ra)] : 1;
    int db = (i >= rank - rb) ? b[i - (rank - rb)] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(what) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcast-compatible");
    }
    out[i] = std::max(da, db);
    ea[4 - rank + i] = da;
    eb[4 - rank + i] = db;
    plan.ext[4 - rank + i] = out[i];
  }
  // Row-major strides with 0 where the operand is broadcast.
  std::int64_t stride_a = 1, stride_b = 1;
  for (int i = 3; i >= 0; --i) {
    plan.sa[i] = (ea[i] == 1 && plan.ext[i] != 1) ? 0 : stride_a;
    plan.sb[i] = (eb[i] == 1 && plan.ext[i] != 1) ? 0 : stride_b;
    stride_a *= ea[i];
    stride_b *= eb[i];
  }
  plan.out = std::move(out);
  return plan;
}

enum class BinKind { kAdd, kMul };

template <class S>
TensorT<S> binary_broadcast(const TensorT<S>& a, const TensorT<S>& b, BinKind kind,
                            const char* what) {
  BcastPlan plan = broadcast_plan(a.shape(), b.shape(), what);
  auto node = make_node<S>(plan.out, {a, b});
  const S* pa = a.values().data();
  const S* pb = b.values().data();
  S* po = node->value.data();

  if (plan.same_shape) {
    const std::size_t n = node->value.size();
    if (kind == BinKind::kAdd) {
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    } else {
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    }
  } else {
    std::int64_t o = 0;
    for (std::int64_t i0 = 0; i0 < plan.ext[0]; ++i0)
      for (std::int64_t i1 = 0; i1 < plan.ext[1]; ++i1)
        for (std::int64_t i2 = 0; i2 < plan.ext[2]; ++i2) {
          std::int64_t base_a = i0 * plan.sa[0] + i1 * plan.sa[1] + i2 * plan.sa[2];
          std::int64_t base_b = i0 * plan.sb[0] + i1 * plan.sb[1] + i2 * plan.sb[2];
          for (std::int64_t i3 = 0; i3 < plan.ext[3]; ++i3, ++o) {
            S va = pa[base_a + i3 * plan.sa[3]];
            S vb = pb[base_b + i3 * plan.sb[3]];
            po[o] = (kind == BinKind::kAdd) ? va + vb : va * vb;
          }
        }
  }

  if (node->requires_grad) {
    TensorNode<S>* out = node.get();
    TensorNode<S>* an = a.node().get();
    TensorNode<S>* bn = b.node().get();
    node->backprop = [out, an, bn, plan, kind]() {
      const S* g = out->grad.data();
      std::int64_t o = 0;
      for (std::int64_t i0 = 0; i0 < plan.ext[0]; ++i0)
        for (std::int64_t i1 = 0; i1 < plan.ext[1]; ++i1)
          for (std::int64_t i2 = 0; i2 < plan.ext[2]; ++i2) {
            std::int64_t base_a = i0 * plan.sa[0] + i1 * plan.sa[1] + i2 * plan.sa[2];
            std::int64_t base_b = i0 * plan.sb[0] + i1 * plan.sb[1] + i2 * plan.sb[2];
            for (std::int64_t i3 = 0; i3 < plan.ext[3]; ++i3, ++o) {
              std::int64_t ia = base_a + i3 * plan.sa[3];
              std::int64_t ib = base_b + i3 * plan.sb[3];
              if (kind == BinKind::kAdd) {
                if (an->requires_grad) an->grad[ia] += g[o];
                if (bn->requires_grad) bn->grad[ib] += g[o];
              } else {
                if (an->requires_grad) an->grad[ia] += g[o] * bn->value[ib];
                if (bn->requires_grad) bn->grad[ib] += g[o] * an->value[ia];
              }
            }
          }
    };
  }
  return TensorT<S>::wrap(std::move(node));
}

}  // namespace

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  return binary_broadcast(a, b, BinKind::kAdd, "add");
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  return binary_broadcast(a, b, BinKind::kMul, "mul");
}

// ---------------------------------------------------------------------------
// concat / narrow / reshape
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> concat_channels(std::span<const TensorT<S>> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  for (const auto& p : parts) require_rank(p.shape(), 3, "concat_channels input");
  const int H = parts[0].shape()[1], W = parts[0].shape()[2];
  int C = 0;
  for (const auto& p : parts) {
    if (p.shape()[1] != H || p.shape()[2] != W) {
      throw ShapeError("concat_channels: spatial extents differ");
    }
    C += p.shape()[0];
  }
  auto node = make_node<S>(Shape{C, H, W}, parts);
  std::int64_t off = 0;
  for (const auto& p : parts) {
    std::memcpy(node->value.data() + off, p.values().data(),
                sizeof(S) * p.values().size());
    off += p.size();
  }

  if (node->requires_grad) {
    TensorNode<S>* out = node.get();
    std::vector<TensorNode<S>*> srcs;
    for (const auto& p : parts) srcs.push_back(p.node().get());
    node->backprop = [out, srcs]() {
      std::int64_t off = 0;
      for (TensorNode<S>* src : srcs) {
        if (src->requires_grad) {
          for (std::size_t i = 0; i < src->value.size(); ++i) {
            src->grad[i] += out->grad[off + i];
          }
        }
        off += static_cast<std::int64_t>(src->value.size());
      }
    };
  }
  return TensorT<S>::wrap(std::move(node));
}

template <class S>
TensorT<S> narrow_channels(const TensorT<S>& input, int first, int count) {
  require_rank(input.shape(), 3, "narrow_channels input");
  const int C = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
  if (first < 0 || count < 1 || first + count > C) {
    throw ShapeError("narrow_channels: slice [" + std::to_string(first) + "," +
                     std::to_string(first + count) + ") out of range for C=" + std::to_string(C));
  }
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  auto node = make_node<S>({count, H, W}, {input});
  std::memcpy(node->value.data(), input.values().data() + first * plane,
              sizeof(S) * node->value.size());
  if (node->requires_grad) {
    TensorNode<S>* out = node.get();
    TensorNode<S>* in = input.node().get();
    node->backprop = [out, in, first, plane]() {
      S* dst = in->grad.data() + first * plane;
      for (std::size_t i = 0; i < out->grad.size(); ++i) dst[i] += out->grad[i];
    };
  }
  return TensorT<S>::wrap(std::move(node));
}

template <class S>
TensorT<S> reshape(const TensorT<S>& input, Shape shape) {
  if (shape_count(shape) != input.size()) {
    throw ShapeError("reshape: " + shape_str(input.shape()) + " -> " + shape_str(shape) +
                     " changes element count");
  }
  auto node = make_node<S>(std::move(shape), {input});
  std::memcpy(node->value.data(), input.values().data(), sizeof(S) * node->value.size());
  if (node->requires_grad) {
    TensorNode<S>* out = node.get();
    TensorNode<S>* in = input.node().get();
    node->backprop = [out, in]() {
      for (std::size_t i = 0; i < out->grad.size(); ++i) in->grad[i] += out->grad[i];
    };
  }
  return TensorT<S>::wrap(std::move(node));
}

// ---------------------------------------------------------------------------
// reductions and losses
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> sum(const TensorT<S>& input) {
  auto node = make_node<S>(Shape{1}, {input});
  double acc = 0;
  for (S v : input.values()) acc += v;
  node->value[0] = static_cast<S>(acc);
  if (node->requires_grad) {
    TensorNode<S>* out = node.get();
    TensorNode<S>* in = input.node().get();
    node->backprop = [out, in]() {
      S g = out->grad[0];
      for (std::size_t i = 0; i < in->grad.size(); ++i) in->grad[i] += g;
    };
  }
  return TensorT<S>::wrap(std::move(node));
}

template <class S>
TensorT<S> mean_stack(std::span<const TensorT<S>> inputs) {
  if (inputs.empty()) throw ShapeError("mean_stack: no inputs");
  const Shape& shape = inputs[0].shape();
  for (const auto& t : inputs) {
    if (t.shape() != shape) throw ShapeError("mean_stack: shapes differ");
  }
  const std::size_t k = inputs.size();
  auto node = make_node<S>(shape, inputs);
  const S inv = S(1) / static_cast<S>(k);
  std::vector<S> vals(k);
  for (std::size_t i = 0; i < node->value.size(); ++i) {
    for (std::size_t j = 0; j < k; ++j) vals[j] = inputs[j].values()[i];
    std::sort(vals.begin(), vals.end());
    S acc = S(0);
    for (S v : vals) acc += v;
    node->value[i] = acc * inv;
  }
  if (node->requires_grad) {
    TensorNode<S>* out = node.get();
    std::vector<TensorNode<S>*> srcs;
    for (const auto& t : inputs) srcs.push_back(t.node().get());
    node->backprop = [out, srcs, inv]() {
      for (TensorNode<S>* src : srcs) {
        if (!src->requires_grad) continue;
        for (std::size_t i = 0; i < out->grad.size(); ++i) src->grad[i] += out->grad[i] * inv;
      }
    };
  }
  return TensorT<S>::wrap(std::move(node));
}

template <class S>
TensorT<S> bce_loss(const TensorT<S>& pred, const TensorT<S>& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("bce_loss: pred " + shape_str(pred.shape()) + " vs target " +
                     shape_str(target.shape()));
  }
  const S eps = static_cast<S>(kProbEps);
  const S hi = S(1) - eps;
  const S* p = pred.values().data();
  const S* y = target.values().data();
  for (std::size_t i = 0; i < target.values().size(); ++i) {
    if (y[i] != S(0) && y[i] != S(1)) {
      throw ValueError("bce_loss: target values must be exactly 0 or 1");
    }
  }
  check_finite(pred.values(), "bce_loss pred");

  auto node = make_node<S>(Shape{1}, {pred, target});
  double acc = 0;
  for (std::size_t i = 0; i < pred.values().size(); ++i) {
    S pc = std::min(hi, std::max(eps, p[i]));
    acc -= (y[i] == S(1)) ? std::log(static_cast<double>(pc))
                          : std::log(1.0 - static_cast<double>(pc));
  }
  node->value[0] = static_cast<S>(acc);

  if (node->requires_grad) {
    TensorNode<S>* out = node.get();
    TensorNode<S>* pn = pred.node().get();
    node->backprop = [out, pn, eps, hi, y]() {
      if (!pn->requires_grad) return;
      S g = out->grad[0];
      for (std::size_t i = 0; i < pn->value.size(); ++i) {
        // The clamp derivative is taken as 1: chained behind a (clamped)
        // sigmoid this reduces to the bounded (p - y) logit gradient, so
        // saturated-wrong pixels keep their pull instead of freezing.
        S pc = std::min(hi, std::max(eps, pn->value[i]));
        pn->grad[i] += g * (pc - y[i]) / (pc * (S(1) - pc));
      }
    };
  }
  return TensorT<S>::wrap(std::move(node));
}

template <class S>
TensorT<S> gaussian_kl(const TensorT<S>& mean, const TensorT<S>& logvar) {
  if (mean.shape() != logvar.shape()) {
    throw ShapeError("gaussian_kl: mean " + shape_str(mean.shape()) + " vs logvar " +
                     shape_str(logvar.shape()));
  }
  check_finite(mean.values(), "gaussian_kl mean");
  check_finite(logvar.values(), "gaussian_kl logvar");
  const S cap = static_cast<S>(kLogvarClampAbs);

  auto node = make_node<S>(Shape{1}, {mean, logvar});
  const S* mu = mean.values().data();
  const S* lv = logvar.values().data();
  double acc = 0;
  for (std::size_t i = 0; i < mean.values().size(); ++i) {
    double l = std::min<double>(cap, std::max<double>(-cap, lv[i]));
    double m = mu[i];
    acc += 0.5 * (m * m + std::exp(l) - l - 1.0);
  }
  node->value[0] = static_cast<S>(acc);

  if (node->requires_grad) {
    TensorNode<S>* out = node.get();
    TensorNode<S>* mn = mean.node().get();
    TensorNode<S>* ln = logvar.node().get();
    node->backprop = [out, mn, ln, cap]() {
      S g = out->grad[0];
      if (mn->requires_grad) {
        for (std::size_t i = 0; i < mn->value.size(); ++i) {
          mn->grad[i] += g * mn->value[i];
        }
      }
      if (ln->requires_grad) {
        for (std::size_t i = 0; i < ln->value.size(); ++i) {
          S l = ln->value[i];
          if (l < -cap || l > cap) continue;
          ln->grad[i] += g * S(0.5) * (std::exp(l) - S(1));
        }
      }
    };
  }
  return TensorT<S>::wrap(std::move(node));
}

// ---------------------------------------------------------------------------
// explicit instantiations
// ---------------------------------------------------------------------------

#define COSEG_OPS_INSTANTIATE(S)                                                     \
  template TensorT<S> conv2d<S>(const TensorT<S>&, const TensorT<S>&,                \
                                const TensorT<S>&, int, int);                        \
  template TensorT<S> linear<S>(const TensorT<S>&, const TensorT<S>&,                \
                                const TensorT<S>&);                                  \
  template TensorT<S> pool_spatial_global<S>(const TensorT<S>&, PoolMode);           \
  template TensorT<S> pool_spatial_2x2<S>(const TensorT<S>&, PoolMode);              \
  template TensorT<S> pool_channel<S>(const TensorT<S>&, PoolMode);                  \
  template TensorT<S> upsample_nearest2x<S>(const TensorT<S>&);                      \
  template TensorT<S> relu<S>(const TensorT<S>&);                                    \
  template TensorT<S> sigmoid<S>(const TensorT<S>&);                                 \
  template TensorT<S> exp<S>(const TensorT<S>&);                                     \
  template TensorT<S> log<S>(const TensorT<S>&);                                     \
  template TensorT<S> clamp<S>(const TensorT<S>&, S, S);                             \
  template TensorT<S> add<S>(const TensorT<S>&, const TensorT<S>&);                  \
  template TensorT<S> mul<S>(const TensorT<S>&, const TensorT<S>&);                  \
  template TensorT<S> scale<S>(const TensorT<S>&, S);                                \
  template TensorT<S> concat_channels<S>(std::span<const TensorT<S>>);               \
  template TensorT<S> narrow_channels<S>(const TensorT<S>&, int, int);               \
  template TensorT<S> reshape<S>(const TensorT<S>&, Shape);                          \
  template TensorT<S> sum<S>(const TensorT<S>&);                                     \
  template TensorT<S> mean_stack<S>(std::span<const TensorT<S>>);                    \
  template TensorT<S> bce_loss<S>(const TensorT<S>&, const TensorT<S>&);             \
  template TensorT<S> gaussian_kl<S>(const TensorT<S>&, const TensorT<S>&);

COSEG_OPS_INSTANTIATE(float)
COSEG_OPS_INSTANTIATE(double)
#undef COSEG_OPS_INSTANTIATE

}  // namespace coseg
