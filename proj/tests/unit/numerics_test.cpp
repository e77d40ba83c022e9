#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "coseg/ops.hpp"
#include "coseg/optimizer.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace coseg;
using namespace coseg::testing;

namespace {

Tensor tensor3(int c, int h, int w, std::vector<float> v, bool grad = false) {
  return Tensor::from_data({c, h, w}, std::move(v), grad);
}

template <class S>
TensorT<S> random_tensor(Shape shape, Pcg32& rng, bool grad, double lo = -1.0,
                         double hi = 1.0) {
  auto t = TensorT<S>::zeros(std::move(shape), grad);
  for (S& v : t.values_mut()) v = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

}  // namespace

TEST_CASE("conv2d identity 1x1 kernel is exact") {
  Pcg32 rng(11);
  auto x = random_tensor<float>({3, 5, 7}, rng, false);
  auto k = Tensor::zeros({3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) k.values_mut()[(c * 3 + c)] = 1.0f;
  auto b = Tensor::zeros({3});
  auto y = conv2d(x, k, b, 1, 0);
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < y.values().size(); ++i) {
    CHECK(y.values()[i] == x.values()[i]);
  }
}

TEST_CASE("conv2d hand example: [[1,2],[3,4]] against [[1,0],[0,1]] gives [[5]]") {
  auto x = tensor3(1, 2, 2, {1, 2, 3, 4});
  auto k = Tensor::from_data({1, 1, 2, 2}, {1, 0, 0, 1});
  auto b = Tensor::zeros({1});
  auto y = conv2d(x, k, b, 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 1});
  // frozen from the direct correlation-sum oracle: 1*1 + 4*1 = 5
  CHECK(y.values()[0] == doctest::Approx(5.0).epsilon(1e-7));
}

TEST_CASE("conv2d zero kernel annihilates") {
  Pcg32 rng(12);
  auto x = random_tensor<float>({2, 4, 4}, rng, false, 0.0, 1.0);
  auto k = Tensor::zeros({3, 2, 3, 3});
  auto b = Tensor::zeros({3});
  auto y = conv2d(x, k, b, 1, 1);
  for (float v : y.values()) CHECK(v == 0.0f);
}

TEST_CASE("conv2d matches the naive correlation oracle over random cases") {
  Pcg32 rng(13);
  for (int trial = 0; trial < 40; ++trial) {
    int C = 1 + rng.uniform_int(3);
    int OC = 1 + rng.uniform_int(3);
    int K = 1 + 2 * rng.uniform_int(2);  // 1 or 3
    int stride = 1 + rng.uniform_int(2);
    int pad = rng.uniform_int(2);
    int H = K + rng.uniform_int(6);
    int W = K + rng.uniform_int(6);

    auto xv = random_values_d(static_cast<std::size_t>(C) * H * W, rng);
    auto kv = random_values_d(static_cast<std::size_t>(OC) * C * K * K, rng);
    auto bv = random_values_d(OC, rng);
    int OH = 0, OW = 0;
    auto expected = naive_conv2d(xv, C, H, W, kv, OC, K, K, bv, stride, pad, OH, OW);

    auto x = Tensor::from_data({C, H, W}, std::vector<float>(xv.begin(), xv.end()));
    auto k = Tensor::from_data({OC, C, K, K}, std::vector<float>(kv.begin(), kv.end()));
    auto b = Tensor::from_data({OC}, std::vector<float>(bv.begin(), bv.end()));
    auto y = conv2d(x, k, b, stride, pad);
    REQUIRE(y.shape() == Shape{OC, OH, OW});
    for (std::size_t i = 0; i < expected.size(); ++i) {
      CHECK(y.values()[i] == doctest::Approx(expected[i]).epsilon(1e-4));
    }
  }
}

TEST_CASE("conv2d rejects shape mismatch and non-finite input") {
  auto x = tensor3(2, 4, 4, std::vector<float>(32, 0.5f));
  auto k = Tensor::zeros({1, 3, 3, 3});  // expects 3 channels
  auto b = Tensor::zeros({1});
  CHECK_THROWS_AS(conv2d(x, k, b, 1, 1), ShapeError);

  auto k2 = Tensor::zeros({1, 2, 3, 3});
  auto bad = tensor3(2, 4, 4, std::vector<float>(32, 0.5f));
  bad.values_mut()[7] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(conv2d(bad, k2, b, 1, 1), ValueError);
  CHECK_THROWS_AS(conv2d(x, k2, b, 0, 1), ShapeError);
}

TEST_CASE("pooling: constant map has avg == max == c") {
  auto x = tensor3(2, 3, 3, std::vector<float>(18, 0.75f));
  auto a = pool_spatial_global(x, PoolMode::kAvg);
  auto m = pool_spatial_global(x, PoolMode::kMax);
  for (float v : a.values()) CHECK(v == doctest::Approx(0.75f));
  for (float v : m.values()) CHECK(v == 0.75f);
}

TEST_CASE("pooling: [[1,2],[3,4]] reduces to avg 2.5 and max 4") {
  auto x = tensor3(1, 2, 2, {1, 2, 3, 4});
  CHECK(pool_spatial_global(x, PoolMode::kAvg).values()[0] == doctest::Approx(2.5));
  CHECK(pool_spatial_global(x, PoolMode::kMax).values()[0] == 4.0f);
}

TEST_CASE("pooling: single-channel input is its own channel avg and max") {
  Pcg32 rng(14);
  auto x = random_tensor<float>({1, 3, 4}, rng, false);
  auto a = pool_channel(x, PoolMode::kAvg);
  auto m = pool_channel(x, PoolMode::kMax);
  for (std::size_t i = 0; i < x.values().size(); ++i) {
    CHECK(a.values()[i] == doctest::Approx(x.values()[i]));
    CHECK(m.values()[i] == x.values()[i]);
  }
}

TEST_CASE("pooling matches naive reduction oracle") {
  Pcg32 rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    int C = 1 + rng.uniform_int(4);
    int H = 1 + rng.uniform_int(5);
    int W = 1 + rng.uniform_int(5);
    auto xv = random_values_d(static_cast<std::size_t>(C) * H * W, rng);
    auto x = Tensor::from_data({C, H, W}, std::vector<float>(xv.begin(), xv.end()));
    auto a = pool_spatial_global(x, PoolMode::kAvg);
    auto m = pool_spatial_global(x, PoolMode::kMax);
    for (int c = 0; c < C; ++c) {
      std::vector<double> plane(xv.begin() + static_cast<std::size_t>(c) * H * W,
                                xv.begin() + static_cast<std::size_t>(c + 1) * H * W);
      CHECK(a.values()[c] == doctest::Approx(naive_global_pool(plane, false)).epsilon(1e-5));
      CHECK(m.values()[c] == doctest::Approx(naive_global_pool(plane, true)).epsilon(1e-6));
    }
  }
}

TEST_CASE("pooling rejects inputs without the reduced axis") {
  auto flat = Tensor::from_data({4}, {1, 2, 3, 4});
  CHECK_THROWS_AS(pool_spatial_global(flat, PoolMode::kAvg), ShapeError);
  CHECK_THROWS_AS(pool_channel(flat, PoolMode::kMax), ShapeError);
}

TEST_CASE("upsample doubles extents into 2x2 constant blocks") {
  auto x = tensor3(1, 2, 2, {1, 2, 3, 4});
  auto y = upsample_nearest2x(x);
  REQUIRE(y.shape() == Shape{1, 4, 4});
  const float expected[16] = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  for (int i = 0; i < 16; ++i) CHECK(y.values()[i] == expected[i]);
}

TEST_CASE("upsample then 2x2 average pooling recovers the input exactly") {
  Pcg32 rng(16);
  auto x = random_tensor<float>({3, 4, 5}, rng, false);
  auto back = pool_spatial_2x2(upsample_nearest2x(x), PoolMode::kAvg);
  REQUIRE(back.shape() == x.shape());
  for (std::size_t i = 0; i < x.values().size(); ++i) {
    CHECK(back.values()[i] == x.values()[i]);
  }
}

TEST_CASE("upsample gradient of sum is the all-4 tensor") {
  auto x = Tensor::from_data({1, 2, 2}, {0.1f, 0.2f, 0.3f, 0.4f}, true);
  auto loss = sum(upsample_nearest2x(x));
  backward(loss);
  for (float g : x.grad()) CHECK(g == 4.0f);
}

TEST_CASE("sigmoid closed forms and open-interval bound") {
  auto x = Tensor::from_data({3}, {0.0f, 3.0f, -80.0f});
  auto y = sigmoid(x);
  CHECK(y.values()[0] == 0.5f);
  CHECK(y.values()[1] == doctest::Approx(0.95257413).epsilon(1e-5));
  CHECK(y.values()[2] > 0.0f);
  CHECK(y.values()[2] < 1.0f);

  Pcg32 rng(17);
  for (int i = 0; i < 200; ++i) {
    auto v = sigmoid(Tensor::from_data({1}, {static_cast<float>(rng.uniform(-60, 60))}));
    CHECK(v.values()[0] > 0.0f);
    CHECK(v.values()[0] < 1.0f);
  }
}

TEST_CASE("concat_channels sums channel counts; mismatched planes rejected") {
  Pcg32 rng(18);
  auto a = random_tensor<float>({3, 2, 2}, rng, false);
  auto b = random_tensor<float>({5, 2, 2}, rng, false);
  Tensor parts[2] = {a, b};
  auto y = concat_channels(std::span<const Tensor>(parts, 2));
  REQUIRE(y.shape() == Shape{8, 2, 2});
  for (int i = 0; i < 12; ++i) CHECK(y.values()[i] == a.values()[i]);
  for (int i = 0; i < 20; ++i) CHECK(y.values()[12 + i] == b.values()[i]);

  auto c = random_tensor<float>({2, 3, 2}, rng, false);
  Tensor bad[2] = {a, c};
  CHECK_THROWS_AS(concat_channels(std::span<const Tensor>(bad, 2)), ShapeError);
}

TEST_CASE("log clamps non-positive inputs instead of failing") {
  auto x = Tensor::from_data({2}, {0.0f, -3.0f});
  auto y = coseg::log(x);
  CHECK(y.values()[0] == doctest::Approx(std::log(1e-7)).epsilon(1e-5));
  CHECK(y.values()[1] == doctest::Approx(std::log(1e-7)).epsilon(1e-5));
}

TEST_CASE("add/mul broadcast per-channel and per-plane operands") {
  auto z = tensor3(2, 2, 2, {1, 2, 3, 4, 5, 6, 7, 8});
  auto gates = tensor3(2, 1, 1, {0.5f, 2.0f});
  auto scaled = mul(z, gates);
  const float expected[8] = {0.5f, 1, 1.5f, 2, 10, 12, 14, 16};
  for (int i = 0; i < 8; ++i) CHECK(scaled.values()[i] == doctest::Approx(expected[i]));

  auto plane = tensor3(1, 2, 2, {1, 0, 0, 1});
  auto gated = mul(z, plane);
  const float expected2[8] = {1, 0, 0, 4, 5, 0, 0, 8};
  for (int i = 0; i < 8; ++i) CHECK(gated.values()[i] == doctest::Approx(expected2[i]));

  auto bad = tensor3(2, 3, 2, std::vector<float>(12, 1.0f));
  CHECK_THROWS_AS(add(z, bad), ShapeError);
}

TEST_CASE("linear: identity, annihilator, and the hand matrix oracle") {
  auto x = Tensor::from_data({2}, {1.0f, -1.0f});
  auto eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  auto zero_b = Tensor::zeros({2});
  auto y = linear(x, eye, zero_b);
  CHECK(y.values()[0] == 1.0f);
  CHECK(y.values()[1] == -1.0f);

  auto zeros_w = Tensor::zeros({2, 2});
  auto z = linear(x, zeros_w, zero_b);
  CHECK(z.values()[0] == 0.0f);
  CHECK(z.values()[1] == 0.0f);

  // frozen from naive_linear: [[2,0],[0,2]]*[1,-1] + [1,1] = [3,-1]
  auto w = Tensor::from_data({2, 2}, {2, 0, 0, 2});
  auto b = Tensor::from_data({2}, {1, 1});
  auto expected = naive_linear({1.0, -1.0}, {2, 0, 0, 2}, 2, 2, {1, 1});
  auto out = linear(x, w, b);
  CHECK(out.values()[0] == doctest::Approx(expected[0]));
  CHECK(out.values()[1] == doctest::Approx(expected[1]));
  CHECK(expected[0] == 3.0);
  CHECK(expected[1] == -1.0);
}

TEST_CASE("bce closed forms") {
  auto half = Tensor::from_data({1}, {0.5f});
  auto one = Tensor::from_data({1}, {1.0f});
  auto zero = Tensor::from_data({1}, {0.0f});
  CHECK(bce_loss(half, one).item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  CHECK(bce_loss(half, zero).item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));

  auto p9 = Tensor::from_data({1}, {0.9f});
  CHECK(bce_loss(p9, one).item() == doctest::Approx(0.10536052).epsilon(1e-5));

  auto bad_target = Tensor::from_data({1}, {0.25f});
  CHECK_THROWS_AS(bce_loss(half, bad_target), ValueError);
  auto mism = Tensor::from_data({2}, {1.0f, 0.0f});
  CHECK_THROWS_AS(bce_loss(half, mism), ShapeError);
}

TEST_CASE("gaussian_kl closed forms and nonnegativity") {
  auto z4 = Tensor::zeros({4});
  CHECK(gaussian_kl(z4, z4).item() == 0.0f);

  auto ones = Tensor::full({4}, 1.0f);
  CHECK(gaussian_kl(ones, z4).item() == doctest::Approx(4 * 0.5).epsilon(1e-6));
  CHECK(gaussian_kl(z4, ones).item() ==
        doctest::Approx(4 * (0.5 * std::exp(1.0) - 1.0)).epsilon(1e-6));

  Pcg32 rng(19);
  for (int i = 0; i < 100; ++i) {
    auto mu = random_tensor<float>({6}, rng, false, -3, 3);
    auto lv = random_tensor<float>({6}, rng, false, -3, 3);
    CHECK(gaussian_kl(mu, lv).item() >= 0.0f);
  }
}

TEST_CASE("backward: linear sum gives unit gradients") {
  auto w = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  backward(sum(w));
  for (float g : w.grad()) CHECK(g == 1.0f);
}

TEST_CASE("backward: loss sum(w*w) on [1,2] gives [2,4]") {
  auto w = Tensor::from_data({2}, {1.0f, 2.0f}, true);
  backward(sum(mul(w, w)));
  CHECK(w.grad()[0] == doctest::Approx(2.0f));
  CHECK(w.grad()[1] == doctest::Approx(4.0f));
}

TEST_CASE("backward: a tensor feeding two consumers accumulates both") {
  auto x = Tensor::from_data({2}, {0.3f, -0.7f}, true);
  auto y = add(relu(x), scale(x, 2.0f));
  backward(sum(y));
  CHECK(x.grad()[0] == doctest::Approx(3.0f));  // relu active + 2
  CHECK(x.grad()[1] == doctest::Approx(2.0f));  // relu inactive + 2
}

TEST_CASE("backward rejects non-scalar losses; untouched params keep zero grad") {
  auto x = Tensor::from_data({2}, {1.0f, 2.0f}, true);
  auto unused = Tensor::from_data({3}, {1.0f, 1.0f, 1.0f}, true);
  CHECK_THROWS_AS(backward(mul(x, x)), ShapeError);
  backward(sum(x));
  REQUIRE(unused.grad().size() == 3);
  for (float g : unused.grad()) CHECK(g == 0.0f);
}

TEST_CASE("mean_stack is bitwise invariant under input permutation") {
  Pcg32 rng(20);
  std::vector<Tensor> ts;
  for (int i = 0; i < 5; ++i) ts.push_back(random_tensor<float>({4, 2, 2}, rng, false, -2, 2));
  auto base = mean_stack(std::span<const Tensor>(ts));
  std::vector<Tensor> perm = {ts[3], ts[0], ts[4], ts[2], ts[1]};
  auto shuffled = mean_stack(std::span<const Tensor>(perm));
  for (std::size_t i = 0; i < base.values().size(); ++i) {
    CHECK(base.values()[i] == shuffled.values()[i]);
  }
}

TEST_CASE("sgd: vanilla step, zero rate, and the two-step momentum recurrence") {
  auto make_store = [] {
    ParamStore store;
    store.add("w", Tensor::from_data({1}, {1.0f}, true));
    return store;
  };

  {
    ParamStore store = make_store();
    SgdMomentum opt(0.1f, 0.0f);
    opt.attach(store);
    store.get("w").grad_mut()[0] = 0.5f;
    opt.step(store);
    CHECK(store.get("w").values()[0] == doctest::Approx(0.95f));
  }
  {
    ParamStore store = make_store();
    SgdMomentum opt(0.0f, 0.9f);
    opt.attach(store);
    store.get("w").grad_mut()[0] = 123.0f;
    opt.step(store);
    CHECK(store.get("w").values()[0] == 1.0f);
  }
  {
    // hand recurrence: v1=-0.05, w1=0.95; v2=0.9*(-0.05)-0.05=-0.095, w2=0.855
    float v = 0.0f, w = 1.0f;
    for (int i = 0; i < 2; ++i) {
      v = 0.9f * v - 0.1f * 0.5f;
      w += v;
    }
    ParamStore store = make_store();
    SgdMomentum opt(0.1f, 0.9f);
    opt.attach(store);
    std::vector<float> expected = {0.95f, w};
    for (int step = 0; step < 2; ++step) {
      store.get("w").zero_grad();
      store.get("w").grad_mut()[0] = 0.5f;
      opt.step(store);
      CHECK(store.get("w").values()[0] == doctest::Approx(expected[step]).epsilon(1e-6));
    }
    CHECK(w == doctest::Approx(0.855f).epsilon(1e-6));
  }
}

TEST_CASE("sgd errors on a parameter without gradient storage") {
  ParamStore store;
  store.add("w", Tensor::from_data({2}, {1.0f, 2.0f}, false));
  SgdMomentum opt(0.1f, 0.0f);
  opt.attach(store);
  CHECK_THROWS_AS(opt.step(store), ValueError);
}

// Gradient spot-checks in the float64 test mode; the acceptance suite runs
// the full randomized battery.
TEST_CASE("gradcheck: conv2d, linear, pools, upsample, activations") {
  Pcg32 rng(21);
  using D = TensorT<double>;

  for (int trial = 0; trial < 3; ++trial) {
    auto x = random_tensor<double>({2, 5, 5}, rng, true);
    auto k = random_tensor<double>({3, 2, 3, 3}, rng, true);
    auto b = random_tensor<double>({3}, rng, true);
    auto weights = random_tensor<double>({4, 3}, rng, true);
    auto res = check_gradients<double>(
        {&x, &k, &b},
        [&]() -> D { return sum(conv2d(x, k, b, 2, 1)); });
    CHECK_MESSAGE(res.ok(), res.worst);
  }
  {
    auto x = random_tensor<double>({3, 4, 4}, rng, true);
    auto res = check_gradients<double>({&x}, [&]() -> D {
      return sum(mul(pool_spatial_global(x, PoolMode::kAvg),
                     pool_spatial_global(x, PoolMode::kMax)));
    });
    CHECK_MESSAGE(res.ok(), res.worst);
  }
  {
    auto x = random_tensor<double>({2, 4, 4}, rng, true);
    auto res = check_gradients<double>({&x}, [&]() -> D {
      return sum(sigmoid(upsample_nearest2x(pool_channel(x, PoolMode::kMax))));
    });
    CHECK_MESSAGE(res.ok(), res.worst);
  }
  {
    auto x = random_tensor<double>({5}, rng, true);
    auto w = random_tensor<double>({3, 5}, rng, true);
    auto b = random_tensor<double>({3}, rng, true);
    auto res = check_gradients<double>(
        {&x, &w, &b}, [&]() -> D { return sum(coseg::exp(linear(x, w, b))); });
    CHECK_MESSAGE(res.ok(), res.worst);
  }
  {
    auto p = random_tensor<double>({2, 3, 3}, rng, true, 0.05, 0.95);
    auto mu = random_tensor<double>({4}, rng, true, -2, 2);
    auto lv = random_tensor<double>({4}, rng, true, -2, 2);
    auto y = TensorT<double>::zeros({2, 3, 3});
    for (std::size_t i = 0; i < y.values().size(); ++i) {
      y.values_mut()[i] = (i % 3 == 0) ? 1.0 : 0.0;
    }
    auto res = check_gradients<double>({&p, &mu, &lv}, [&]() -> D {
      return add(bce_loss(p, y), gaussian_kl(mu, lv));
    });
    CHECK_MESSAGE(res.ok(), res.worst);
  }
}
