// Acceptance suite: runs the project's acceptance criteria end to end and
// prints one PASS/FAIL line per criterion.
//
//   acceptance --suite fast            gradients, closed forms, determinism,
//                                      label-boundary checks
//   acceptance --suite overfit         single-episode overfit run
//   acceptance --suite generalization  held-out training/evaluation battery
//   acceptance --suite all             everything (default)
//
// Exit code is the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "coseg/attention.hpp"
#include "coseg/episodes.hpp"
#include "coseg/image_io.hpp"
#include "coseg/metrics.hpp"
#include "coseg/model.hpp"
#include "coseg/optimizer.hpp"
#include "coseg/synthdata.hpp"
#include "coseg/trainer.hpp"
#include "support/gradcheck.hpp"

using namespace coseg;
using coseg::testing::check_gradients;
using coseg::testing::GradCheckResult;
namespace fs = std::filesystem;

namespace {

// Desk-scale learning rate for the summed episode loss; the TrainConfig
// default is documented alongside it in the README.
constexpr float kLr = 3e-6f;

struct Check {
  bool ok = true;
  std::string detail;

  void expect(bool condition, const std::string& what) {
    if (!condition && ok) {
      ok = false;
      detail = what;
    }
  }
  void note(const std::string& what) {
    if (ok) detail = what;
  }
};

struct Criterion {
  std::string name;
  std::function<void(Check&)> body;
};

fs::path work_root;

fs::path work_dir(const std::string& name) {
  fs::path dir = work_root / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args) {
  std::string cmd = std::string(DVICE_CLI) + " " + args + " >/dev/null 2>/dev/null";
  int status = std::system(cmd.c_str());
  if (status == -1) return -1;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::uint8_t> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("missing " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

double median3(double a, double b, double c) {
  return std::max(std::min(a, b), std::min(std::max(a, b), c));
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

template <class S>
TensorT<S> random_tensor(Shape shape, Pcg32& rng, bool grad, double lo = -1.0,
                         double hi = 1.0) {
  auto t = TensorT<S>::zeros(std::move(shape), grad);
  for (S& v : t.values_mut()) v = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

// ---------------------------------------------------------------------------
// C1: gradient suite
// ---------------------------------------------------------------------------

void criterion_gradients(Check& c) {
  const auto start = std::chrono::steady_clock::now();
  Pcg32 rng(2024);
  using D = TensorT<double>;
  double worst = 0.0;
  std::string worst_op;

  auto record = [&](const char* op, const GradCheckResult& res) {
    if (res.norm_rel_err > worst) {
      worst = res.norm_rel_err;
      worst_op = op;
    }
    c.expect(res.ok(), std::string(op) + " gradient mismatch: " + res.worst);
  };

  const int trials = 100;
  for (int t = 0; t < trials && c.ok; ++t) {
    {  // conv2d over strides, paddings, kernel sizes
      int C = 1 + rng.uniform_int(3), OC = 1 + rng.uniform_int(3);
      int K = 1 + 2 * static_cast<int>(rng.uniform_int(2));
      int stride = 1 + rng.uniform_int(2), pad = rng.uniform_int(2);
      int H = K + rng.uniform_int(4), W = K + rng.uniform_int(4);
      auto x = random_tensor<double>({C, H, W}, rng, true);
      auto k = random_tensor<double>({OC, C, K, K}, rng, true);
      auto b = random_tensor<double>({OC}, rng, true);
      record("conv2d", check_gradients<double>({&x, &k, &b}, [&]() -> D {
               return sum(mul(conv2d(x, k, b, stride, pad), conv2d(x, k, b, stride, pad)));
             }));
    }
    {  // linear
      int M = 1 + rng.uniform_int(5), N = 1 + rng.uniform_int(5);
      auto x = random_tensor<double>({N}, rng, true);
      auto w = random_tensor<double>({M, N}, rng, true);
      auto b = random_tensor<double>({M}, rng, true);
      record("linear", check_gradients<double>({&x, &w, &b}, [&]() -> D {
               return sum(sigmoid(linear(x, w, b)));
             }));
    }
    {  // pooling family
      int C = 1 + rng.uniform_int(3);
      int H = 2 * (1 + rng.uniform_int(3)), W = 2 * (1 + rng.uniform_int(3));
      auto x = random_tensor<double>({C, H, W}, rng, true);
      PoolMode mode = (t % 2 == 0) ? PoolMode::kAvg : PoolMode::kMax;
      record("pool_spatial_global", check_gradients<double>({&x}, [&]() -> D {
               return sum(coseg::exp(pool_spatial_global(x, mode)));
             }));
      record("pool_spatial_2x2", check_gradients<double>({&x}, [&]() -> D {
               return sum(mul(pool_spatial_2x2(x, mode), pool_spatial_2x2(x, mode)));
             }));
      record("pool_channel", check_gradients<double>({&x}, [&]() -> D {
               return sum(sigmoid(pool_channel(x, mode)));
             }));
    }
    {  // upsample + elementwise chain
      int C = 1 + rng.uniform_int(2), H = 1 + rng.uniform_int(3), W = 1 + rng.uniform_int(3);
      auto x = random_tensor<double>({C, H, W}, rng, true);
      record("upsample_nearest2x", check_gradients<double>({&x}, [&]() -> D {
               return sum(relu(upsample_nearest2x(x)));
             }));
      auto y = random_tensor<double>({C, H, W}, rng, true, 0.1, 2.0);
      record("elementwise", check_gradients<double>({&x, &y}, [&]() -> D {
               return sum(mul(coseg::log(y), clamp(coseg::exp(x), -5.0, 5.0)));
             }));
    }
    {  // broadcasting add/mul
      int C = 1 + rng.uniform_int(3), H = 1 + rng.uniform_int(3), W = 1 + rng.uniform_int(3);
      auto x = random_tensor<double>({C, H, W}, rng, true);
      auto gates = random_tensor<double>({C, 1, 1}, rng, true);
      auto plane = random_tensor<double>({1, H, W}, rng, true);
      record("broadcast", check_gradients<double>({&x, &gates, &plane}, [&]() -> D {
               return sum(add(mul(x, gates), mul(x, plane)));
             }));
    }
    {  // concat / narrow / reshape / scale / mean_stack
      int H = 1 + rng.uniform_int(3), W = 1 + rng.uniform_int(3);
      auto a = random_tensor<double>({2, H, W}, rng, true);
      auto b = random_tensor<double>({3, H, W}, rng, true);
      record("structure", check_gradients<double>({&a, &b}, [&]() -> D {
               D parts[2] = {a, b};
               D joined = concat_channels(std::span<const D>(parts, 2));
               D mid = narrow_channels(joined, 1, 3);
               D stack[2] = {reshape(scale(a, 1.7), {2 * H * W}),
                             reshape(narrow_channels(joined, 0, 2), {2 * H * W})};
               return add(sum(mid), sum(mean_stack(std::span<const D>(stack, 2))));
             }));
    }
    {  // losses
      int n = 2 + rng.uniform_int(6);
      auto p = random_tensor<double>({n}, rng, true, 0.05, 0.95);
      auto y = TensorT<double>::zeros({n});
      for (int i = 0; i < n; ++i) y.values_mut()[i] = rng.uniform_int(2) ? 1.0 : 0.0;
      auto mu = random_tensor<double>({n}, rng, true, -2, 2);
      auto lv = random_tensor<double>({n}, rng, true, -2, 2);
      record("losses", check_gradients<double>({&p, &mu, &lv}, [&]() -> D {
               return add(bce_loss(p, y), gaussian_kl(mu, lv));
             }));
    }
    {  // attention modules
      int C = 2 + rng.uniform_int(3), H = 1 + rng.uniform_int(3), W = 1 + rng.uniform_int(3);
      auto cham = ChamParamsT<double>::create(C, 2, rng);
      auto spam = SpamParamsT<double>::create(3, rng);
      auto z = random_tensor<double>({C, H, W}, rng, true);
      record("cham", check_gradients<double>(
                         {&z, &cham.fc1_weight, &cham.fc1_bias, &cham.fc2_weight,
                          &cham.fc2_bias},
                         [&]() -> D { return sum(cham_apply(z, cham)); }));
      record("spam", check_gradients<double>({&z, &spam.conv_weight, &spam.conv_bias},
                                             [&]() -> D { return sum(spam_apply(z, spam)); }));
    }
  }

  // Full empirical loss at the 16x16 reduced configuration, every parameter.
  if (c.ok) {
    DviceModelT<double> model(BackboneConfig::reduced16(), 99);
    Pcg32 drng(7);
    auto image = [&](std::uint64_t seed) {
      Pcg32 r(seed);
      auto t = TensorT<double>::zeros({3, 16, 16});
      for (double& v : t.values_mut()) v = r.next_double();
      return t;
    };
    std::vector<TensorT<double>> guide = {image(1), image(2)};
    std::vector<TensorT<double>> coseg = {image(3)};
    auto target = TensorT<double>::zeros({1, 16, 16});
    for (double& v : target.values_mut()) v = drng.next_double() < 0.25 ? 1.0 : 0.0;
    std::vector<TensorT<double>> targets = {target};

    Pcg32 nrng(11);
    auto gen = gaussian_noise<double>(nrng);
    std::vector<TensorT<double>> bank = {gen(Shape{8, 2, 2})};
    std::size_t cursor = 0;
    NoiseFn<double> replay = [&](const Shape&) { return bank.at(cursor++); };

    auto make_loss = [&]() -> TensorT<double> {
      cursor = 0;
      auto out = model.forward_episode(guide, coseg, RunMode::kTrain, replay);
      return dvice_loss<double>(out.masks, targets, out.latents, out.prototype, 1.0, 1.0);
    };
    std::vector<TensorT<double>*> params;
    for (auto& [name, t] : model.params().entries()) params.push_back(&t);
    auto res = check_gradients<double>(params, make_loss);
    record("full-dvice-loss", res);
  }

  double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  c.expect(seconds < 120.0, "gradient suite exceeded its 2 minute budget: " + fmt("%.1f s", seconds));
  c.note("100 trials/op, worst normwise rel err " + fmt("%.2e", worst) + " (" + worst_op + ")");
}

// ---------------------------------------------------------------------------
// C2: closed-form suite
// ---------------------------------------------------------------------------

void criterion_closed_forms(Check& c) {
  auto near = [&](double actual, double expected, double tol, const std::string& what) {
    c.expect(std::abs(actual - expected) <= tol,
             what + ": got " + fmt("%.8f", actual) + ", want " + fmt("%.8f", expected));
  };

  // sigmoid
  auto sig = sigmoid(Tensor::from_data({2}, {0.0f, 3.0f}));
  c.expect(sig.values()[0] == 0.5f, "sigmoid(0) must be exactly 0.5");
  near(sig.values()[1], 0.95257413, 1e-5, "sigmoid(3)");

  // conv identity and hand case
  Pcg32 rng(1);
  auto x = random_tensor<float>({2, 4, 4}, rng, false, 0, 1);
  auto eye = Tensor::zeros({2, 2, 1, 1});
  eye.values_mut()[0] = 1.0f;
  eye.values_mut()[3] = 1.0f;
  auto ident = conv2d(x, eye, Tensor::zeros({2}), 1, 0);
  bool exact = std::equal(x.values().begin(), x.values().end(), ident.values().begin());
  c.expect(exact, "1x1 identity conv must reproduce the input exactly");

  auto hand = conv2d(Tensor::from_data({1, 2, 2}, {1, 2, 3, 4}),
                     Tensor::from_data({1, 1, 2, 2}, {1, 0, 0, 1}), Tensor::zeros({1}), 1, 0);
  near(hand.values()[0], 5.0, 1e-6, "2x2 correlation example");

  // pooling
  auto plane = Tensor::from_data({1, 2, 2}, {1, 2, 3, 4});
  near(pool_spatial_global(plane, PoolMode::kAvg).values()[0], 2.5, 1e-6, "global avg");
  near(pool_spatial_global(plane, PoolMode::kMax).values()[0], 4.0, 0.0, "global max");

  // upsample round trip
  auto up = upsample_nearest2x(x);
  auto back = pool_spatial_2x2(up, PoolMode::kAvg);
  c.expect(std::equal(x.values().begin(), x.values().end(), back.values().begin()),
           "upsample then 2x2 avg-pool must be the exact identity");

  // losses
  near(bce_loss(Tensor::full({1}, 0.5f), Tensor::full({1}, 1.0f)).item(), std::log(2.0), 1e-6,
       "bce(0.5, 1)");
  near(bce_loss(Tensor::full({1}, 0.5f), Tensor::zeros({1})).item(), std::log(2.0), 1e-6,
       "bce(0.5, 0)");
  near(bce_loss(Tensor::full({1}, 0.9f), Tensor::full({1}, 1.0f)).item(), 0.10536052, 1e-5,
       "bce(0.9, 1)");
  auto z4 = Tensor::zeros({4});
  c.expect(gaussian_kl(z4, z4).item() == 0.0f, "KL at the prior must be exactly 0");
  near(gaussian_kl(Tensor::full({4}, 1.0f), z4).item(), 2.0, 1e-6, "KL mu=1");
  near(gaussian_kl(z4, Tensor::full({4}, 1.0f)).item(), 4 * (0.5 * std::exp(1.0) - 1.0), 1e-5,
       "KL logvar=1");

  // attention defaults and the derived gate values
  {
    Pcg32 arng(2);
    auto cham = ChamParams::create(5, 4, arng);
    for (auto t : {&cham.fc1_weight, &cham.fc1_bias, &cham.fc2_weight, &cham.fc2_bias}) {
      std::fill(t->values_mut().begin(), t->values_mut().end(), 0.0f);
    }
    auto gates = cham_weights(random_tensor<float>({5, 3, 3}, arng, false), cham);
    for (float v : gates.values()) c.expect(v == 0.5f, "zero-phi gates must be exactly 0.5");

    ChamParams identity;
    auto eye2 = Tensor::zeros({2, 2}, true);
    eye2.values_mut()[0] = eye2.values_mut()[3] = 1.0f;
    identity.fc1_weight = eye2;
    identity.fc1_bias = Tensor::zeros({2}, true);
    auto eye3 = Tensor::zeros({2, 2}, true);
    eye3.values_mut()[0] = eye3.values_mut()[3] = 1.0f;
    identity.fc2_weight = eye3;
    identity.fc2_bias = Tensor::zeros({2}, true);
    auto z = Tensor::from_data({2, 2, 2}, {2, 0, 1, 1, 0, -2, -1, -1});
    auto w = cham_weights(z, identity);
    near(w.values()[0], 0.95257413, 1e-5, "cham gate sigma(3)");
    near(w.values()[1], 0.26894142, 1e-5, "cham gate sigma(-1)");

    Pcg32 srng(3);
    auto spam = SpamParams::create(7, srng);
    for (auto t : {&spam.conv_weight, &spam.conv_bias}) {
      std::fill(t->values_mut().begin(), t->values_mut().end(), 0.0f);
    }
    auto map = spam_map(random_tensor<float>({3, 4, 4}, srng, false), spam);
    for (float v : map.values()) c.expect(v == 0.5f, "zero-conv spam map must be exactly 0.5");
  }

  // prototype identities on a reduced model
  {
    DviceModel model(BackboneConfig::reduced16(), 40);
    Pcg32 prng(4);
    std::vector<Tensor> guide;
    for (int i = 0; i < 4; ++i) guide.push_back(random_tensor<float>({3, 16, 16}, prng, false, 0, 1));
    std::vector<Tensor> single = {guide[0]};
    auto p1 = model.compute_prototype(single);
    std::vector<Tensor> copies = {guide[0], guide[0]};
    auto p2 = model.compute_prototype(copies);
    for (std::size_t i = 0; i < p1.attended_mean.values().size(); ++i) {
      c.expect(std::abs(p1.attended_mean.values()[i] - p2.attended_mean.values()[i]) <= 1e-5f,
               "duplicate-guide prototype must match the singleton");
    }
    auto pa = model.compute_prototype(guide);
    std::vector<Tensor> perm = {guide[2], guide[0], guide[3], guide[1]};
    auto pb = model.compute_prototype(perm);
    c.expect(std::equal(pa.attended_mean.values().begin(), pa.attended_mean.values().end(),
                        pb.attended_mean.values().begin()),
             "prototype must be bitwise permutation-invariant");
  }

  // zero model emits 0.5 everywhere
  {
    DviceModelT<float> model(BackboneConfig::reduced16(), 41);
    for (auto& [name, t] : model.params().entries()) {
      std::fill(t.values_mut().begin(), t.values_mut().end(), 0.0f);
    }
    Pcg32 zrng(5);
    std::vector<Tensor> guide = {random_tensor<float>({3, 16, 16}, zrng, false, 0, 1)};
    std::vector<Tensor> coseg = {random_tensor<float>({3, 16, 16}, zrng, false, 0, 1)};
    NoiseFn<float> nn = [](const Shape&) -> Tensor { throw ValueError("eval"); };
    auto masks = model.segment_episode(guide, coseg, RunMode::kEval, nn);
    for (float v : masks[0].values()) c.expect(v == 0.5f, "zero model must emit exactly 0.5");
  }

  // optimizer closed forms
  {
    ParamStore store;
    store.add("w", Tensor::from_data({1}, {1.0f}, true));
    SgdMomentum opt(0.1f, 0.9f);
    opt.attach(store);
    store.get("w").grad_mut()[0] = 0.5f;
    opt.step(store);
    near(store.get("w").values()[0], 0.95, 1e-6, "sgd first step");
    store.get("w").zero_grad();
    store.get("w").grad_mut()[0] = 0.5f;
    opt.step(store);
    near(store.get("w").values()[0], 0.855, 1e-6, "sgd second step");
  }

  // loss closed forms
  {
    LatentDistT<float> prior{Tensor::zeros({2, 1, 1}), Tensor::zeros({2, 1, 1})};
    PrototypeT<float> proto{Tensor::zeros({2, 1, 1}), Tensor::zeros({2, 1, 1})};
    std::vector<Tensor> pred = {Tensor::from_data({1, 2, 2}, {0.9f, 0.5f, 0.5f, 0.1f})};
    std::vector<Tensor> target = {Tensor::from_data({1, 2, 2}, {1, 1, 0, 0})};
    std::vector<LatentDistT<float>> latents = {prior};
    near(dvice_loss<float>(pred, target, latents, proto, 1.0f, 1.0f).item(), 1.59701536, 1e-5,
         "mixed 2x2 episode loss");
  }

  // binarization thresholds
  {
    auto r = binarize(Tensor::from_data({1, 2, 2}, {0.6f, 0.4f, 0.5f, 0.2f}), 0.5f, 0.1f);
    c.expect(!r.no_foreground && r.mask.values == std::vector<std::uint8_t>({1, 0, 1, 0}),
             "binarize threshold example");
    auto blank = binarize(Tensor::full({1, 2, 2}, 0.05f), 0.5f, 0.1f);
    c.expect(blank.no_foreground && blank.mask.foreground_count() == 0,
             "blank rule at mean probability below the threshold");
  }

  c.note("all frozen values matched (exact or within 1e-5)");
}

// ---------------------------------------------------------------------------
// C3: overfit check (end to end through the CLI)
// ---------------------------------------------------------------------------

void criterion_overfit(Check& c) {
  const auto start = std::chrono::steady_clock::now();
  fs::path dir = work_dir("overfit");
  fs::path corpus = dir / "corpus";
  c.expect(run_cli("generate --out " + corpus.string() + " --seed 0 --samples-per-class 24") == 0,
           "corpus generation failed");
  if (!c.ok) return;

  const std::uint64_t seed = 1;
  std::string cmd = "train --data " + corpus.string() + " --fixed-episode --iters 500 --lr " +
                    fmt("%.1e", kLr) + " --seed " + std::to_string(seed) + " --k 8 --n 6 --m 4" +
                    " --ckpt-out " + (dir / "final.ckpt").string() + " --out-dir " + dir.string();
  c.expect(run_cli(cmd) == 0, "overfit training run failed");
  if (!c.ok) return;

  auto log = read_loss_log(dir / "loss_log.tsv");
  c.expect(log.size() == 500, "expected 500 loss entries");
  if (!c.ok) return;
  double first = log.front().loss, last = log.back().loss;
  c.expect(last < 0.10 * first,
           "final loss " + fmt("%.1f", last) + " not below 10% of initial " + fmt("%.1f", first));

  // Re-derive the fixed episode the trainer drew and score the checkpoint.
  Dataset ds = Dataset::load(corpus / "manifest.tsv");
  TrainConfig cfg;
  cfg.seed = seed;
  Pcg32 rng(seed, 1);
  Episode ep = sample_episode(ds, ds.classes, cfg.episode, rng);
  ModelEpisode view = strip_labels(ep);
  DviceModel model = model_from_checkpoint(load_checkpoint(dir / "final.ckpt"), cfg);
  NoiseFn<float> nn = [](const Shape&) -> Tensor { throw ValueError("eval"); };
  auto masks = model.segment_episode(view.guide_images, view.coseg_images, RunMode::kEval, nn);
  double j = 0;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    j += jaccard(binarize(masks[i], 0.5f, 0.1f).mask, view.coseg_masks[i]);
  }
  j /= static_cast<double>(masks.size());
  c.expect(j >= 0.95, "training-episode mean J " + fmt("%.4f", j) + " below 0.95");

  double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  c.expect(seconds < 600.0, "overfit run exceeded its 10 minute budget");
  c.note("loss " + fmt("%.0f", first) + " -> " + fmt("%.1f", last) + ", mean J " +
         fmt("%.4f", j) + ", " + fmt("%.0f s", seconds));
}

// ---------------------------------------------------------------------------
// C4-C8: generalization battery (shared trained models)
// ---------------------------------------------------------------------------

struct GeneralizationRuns {
  bool ready = false;
  std::string failure;
  double train_eval_seconds = 0;
  std::vector<double> j8, j4, j2, p8;          // full model, per seed
  std::vector<double> j8_ablated;              // no_cham + no_spam
  std::vector<double> first_median, last_median;
  fs::path corpus_dir;
  fs::path dual_dir;
  std::vector<Checkpoint> full_ckpts;
  ClassSplit split;
};

GeneralizationRuns& generalization_runs() {
  static GeneralizationRuns runs = [] {
    GeneralizationRuns r;
    const auto start = std::chrono::steady_clock::now();
    try {
      r.corpus_dir = work_dir("generalization") / "corpus";
      CorpusConfig corpus_cfg;
      corpus_cfg.seed = 0;
      corpus_cfg.samples_per_class = 24;
      fs::path manifest = generate_corpus(corpus_cfg, r.corpus_dir);
      Dataset ds = Dataset::load(manifest);
      r.split = split_classes(ds.classes, 1.0 / 3.0, 0);

      for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        for (bool ablate : {false, true}) {
          TrainConfig cfg;
          cfg.iterations = 2000;
          cfg.learning_rate = kLr;
          cfg.seed = seed;
          cfg.no_cham = ablate;
          cfg.no_spam = ablate;
          TrainResult result = train(ds, r.split.base_classes, cfg);
          DviceModel model = model_from_checkpoint(result.checkpoint, cfg);

          auto eval_at = [&](int n) {
            Pcg32 rng(100 + seed, 7);
            return evaluate(model, ds, r.split.target_classes, EpisodeConfig{8, n, 4}, 200, rng);
          };
          if (!ablate) {
            EvalReport e8 = eval_at(8), e4 = eval_at(4), e2 = eval_at(2);
            r.j8.push_back(e8.mean_jaccard);
            r.p8.push_back(e8.mean_precision);
            r.j4.push_back(e4.mean_jaccard);
            r.j2.push_back(e2.mean_jaccard);
            std::vector<double> first_losses, last_losses;
            for (std::size_t i = 0; i < 200; ++i) first_losses.push_back(result.loss_log[i].loss);
            for (std::size_t i = 1800; i < 2000; ++i) last_losses.push_back(result.loss_log[i].loss);
            r.first_median.push_back(median(first_losses));
            r.last_median.push_back(median(last_losses));
            r.full_ckpts.push_back(std::move(result.checkpoint));
          } else {
            r.j8_ablated.push_back(eval_at(8).mean_jaccard);
          }
        }
      }

      CorpusConfig dual_cfg;
      dual_cfg.seed = 7;
      dual_cfg.samples_per_class = 12;
      dual_cfg.dual_object = true;
      r.dual_dir = work_dir("dual") / "corpus";
      generate_corpus(dual_cfg, r.dual_dir);

      r.ready = true;
    } catch (const std::exception& e) {
      r.failure = e.what();
    }
    r.train_eval_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
  }();
  return runs;
}

void criterion_generalization(Check& c) {
  GeneralizationRuns& r = generalization_runs();
  c.expect(r.ready, "training battery failed: " + r.failure);
  if (!c.ok) return;
  double j = median3(r.j8[0], r.j8[1], r.j8[2]);
  double p = median3(r.p8[0], r.p8[1], r.p8[2]);
  c.expect(j >= 0.70, "median held-out J " + fmt("%.4f", j) + " below 0.70");
  c.expect(p >= 90.0, "median held-out P " + fmt("%.2f", p) + " below 90");
  c.expect(r.train_eval_seconds < 3600.0, "generalization battery exceeded 60 minutes");
  c.note("median J " + fmt("%.4f", j) + ", median P " + fmt("%.2f", p) + " over seeds {1,2,3}, " +
         fmt("%.0f s", r.train_eval_seconds) + " incl. ablations");
}

void criterion_outlier_robustness(Check& c) {
  GeneralizationRuns& r = generalization_runs();
  c.expect(r.ready, "training battery failed: " + r.failure);
  if (!c.ok) return;
  double j8 = median3(r.j8[0], r.j8[1], r.j8[2]);
  double j4 = median3(r.j4[0], r.j4[1], r.j4[2]);
  double j2 = median3(r.j2[0], r.j2[1], r.j2[2]);
  c.expect(j8 > j2 - 0.02,
           "J(n=8) " + fmt("%.4f", j8) + " does not exceed J(n=2) - 0.02 = " + fmt("%.4f", j2 - 0.02));
  c.expect(j8 - j4 <= 0.15, "50% outliers degrade J by " + fmt("%.4f", j8 - j4) + " > 0.15");
  c.note("median J at n=8/4/2: " + fmt("%.4f", j8) + " / " + fmt("%.4f", j4) + " / " +
         fmt("%.4f", j2));
}

struct DualImage {
  fs::path image;
  std::string class_a, class_b;
  fs::path mask_a, mask_b;
};

std::map<std::pair<std::string, std::string>, std::vector<DualImage>> load_dual_pairs(
    const fs::path& corpus) {
  std::ifstream in(corpus / "manifest.tsv");
  if (!in) throw IoError("missing dual manifest");
  std::map<std::string, std::vector<std::array<std::string, 2>>> by_image;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto t1 = line.find('\t');
    auto t2 = line.find('\t', t1 + 1);
    by_image[line.substr(t1 + 1, t2 - t1 - 1)].push_back(
        {line.substr(0, t1), line.substr(t2 + 1)});
  }
  std::map<std::pair<std::string, std::string>, std::vector<DualImage>> pairs;
  for (auto& [image, rows] : by_image) {
    if (rows.size() != 2) throw FormatError("dual image without exactly two rows");
    DualImage d;
    d.image = corpus / image;
    auto& a = rows[0][0] < rows[1][0] ? rows[0] : rows[1];
    auto& b = rows[0][0] < rows[1][0] ? rows[1] : rows[0];
    d.class_a = a[0];
    d.mask_a = corpus / a[1];
    d.class_b = b[0];
    d.mask_b = corpus / b[1];
    pairs[{d.class_a, d.class_b}].push_back(std::move(d));
  }
  return pairs;
}

void criterion_guide_steering(Check& c) {
  GeneralizationRuns& r = generalization_runs();
  c.expect(r.ready, "training battery failed: " + r.failure);
  if (!c.ok) return;

  TrainConfig cfg;
  DviceModel model = model_from_checkpoint(r.full_ckpts[0], cfg);
  Dataset singles = Dataset::load(r.corpus_dir / "manifest.tsv");
  auto pairs = load_dual_pairs(r.dual_dir);
  std::vector<std::pair<std::string, std::string>> pair_keys;
  for (const auto& [key, images] : pairs) pair_keys.push_back(key);

  NoiseFn<float> nn = [](const Shape&) -> Tensor { throw ValueError("eval"); };
  Pcg32 rng(505, 7);
  const int episodes = 50;
  const int m = 4, k = 8;
  int flips = 0;

  auto pick_guides = [&](const std::string& cls) {
    std::vector<int> pool = singles.by_class.at(cls);
    rng.shuffle(pool);
    std::vector<Tensor> guides;
    for (int i = 0; i < k; ++i) guides.push_back(singles.samples[pool[i]].image);
    return guides;
  };

  for (int e = 0; e < episodes; ++e) {
    const auto& key = pair_keys[rng.uniform_int(static_cast<std::uint32_t>(pair_keys.size()))];
    auto images = pairs.at(key);
    rng.shuffle(images);
    std::vector<Tensor> coseg;
    std::vector<Mask> masks_a, masks_b;
    for (int i = 0; i < m; ++i) {
      coseg.push_back(read_ppm(images[i].image));
      masks_a.push_back(read_pgm_mask(images[i].mask_a));
      masks_b.push_back(read_pgm_mask(images[i].mask_b));
    }

    auto dominance = [&](const std::vector<Tensor>& guides) {
      auto preds = model.segment_episode(guides, coseg, RunMode::kEval, nn);
      std::int64_t inter_a = 0, inter_b = 0;
      for (int i = 0; i < m; ++i) {
        Mask bin = binarize(preds[i], 0.5f, 0.0f).mask;
        for (std::size_t px = 0; px < bin.values.size(); ++px) {
          inter_a += bin.values[px] & masks_a[i].values[px];
          inter_b += bin.values[px] & masks_b[i].values[px];
        }
      }
      return std::make_pair(inter_a, inter_b);
    };

    auto [a_with_a, b_with_a] = dominance(pick_guides(key.first));
    auto [a_with_b, b_with_b] = dominance(pick_guides(key.second));
    if (a_with_a > b_with_a && b_with_b > a_with_b) ++flips;
  }

  double rate = 100.0 * flips / episodes;
  c.expect(rate >= 80.0, "guide steering flipped dominance in only " + fmt("%.0f%%", rate));
  c.note(fmt("%.0f%%", rate) + " of 50 dual-object episodes flipped with the guide majority");
}

void criterion_attention_ablation(Check& c) {
  GeneralizationRuns& r = generalization_runs();
  c.expect(r.ready, "training battery failed: " + r.failure);
  if (!c.ok) return;
  double full = median3(r.j8[0], r.j8[1], r.j8[2]);
  double ablated = median3(r.j8_ablated[0], r.j8_ablated[1], r.j8_ablated[2]);
  c.expect(full >= ablated - 0.02, "full model J " + fmt("%.4f", full) +
                                       " trails the attention-ablated model " +
                                       fmt("%.4f", ablated) + " by more than 0.02");
  c.note("median J full " + fmt("%.4f", full) + " vs no-attention " + fmt("%.4f", ablated));
}

void criterion_loss_trajectory(Check& c) {
  GeneralizationRuns& r = generalization_runs();
  c.expect(r.ready, "training battery failed: " + r.failure);
  if (!c.ok) return;
  double first = median3(r.first_median[0], r.first_median[1], r.first_median[2]);
  double last = median3(r.last_median[0], r.last_median[1], r.last_median[2]);
  c.expect(last < first, "median loss over the final 10% (" + fmt("%.1f", last) +
                             ") is not below the first 10% (" + fmt("%.1f", first) + ")");
  c.note("median first-10% loss " + fmt("%.1f", first) + " -> final-10% " + fmt("%.1f", last));
}

// ---------------------------------------------------------------------------
// C9: determinism & persistence
// ---------------------------------------------------------------------------

void criterion_determinism(Check& c) {
  fs::path dir = work_dir("determinism");
  fs::path corpus = dir / "corpus";
  c.expect(run_cli("generate --out " + corpus.string() + " --seed 3 --samples-per-class 12") == 0,
           "corpus generation failed");
  if (!c.ok) return;

  std::string train_cmd = "train --data " + corpus.string() +
                          " --iters 25 --lr 3e-6 --seed 9 --strict-deterministic";
  c.expect(run_cli(train_cmd + " --ckpt-out " + (dir / "a.ckpt").string() + " --out-dir " +
                   (dir / "a").string()) == 0,
           "first strict-deterministic run failed");
  c.expect(run_cli(train_cmd + " --ckpt-out " + (dir / "b.ckpt").string() + " --out-dir " +
                   (dir / "b").string()) == 0,
           "second strict-deterministic run failed");
  if (!c.ok) return;
  c.expect(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"),
           "equal seeds produced different checkpoints");

  Checkpoint loaded = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(loaded, dir / "resaved.ckpt");
  c.expect(slurp(dir / "a.ckpt") == slurp(dir / "resaved.ckpt"),
           "save -> load -> save is not byte-identical");

  auto eval_cmd = [&](const std::string& ckpt, const std::string& report) {
    return run_cli("eval --data " + corpus.string() + " --ckpt " + ckpt +
                   " --episodes 5 --k 4 --n 3 --m 2 --seed 17 --report " + report);
  };
  c.expect(eval_cmd((dir / "a.ckpt").string(), (dir / "r1.csv").string()) == 0, "eval 1 failed");
  c.expect(eval_cmd((dir / "resaved.ckpt").string(), (dir / "r2.csv").string()) == 0,
           "eval 2 failed");
  if (!c.ok) return;
  c.expect(slurp(dir / "r1.csv") == slurp(dir / "r2.csv"),
           "checkpoint round-trip changed the evaluation report");
  c.note("checkpoints and round-tripped eval reports are byte-identical");
}

// ---------------------------------------------------------------------------
// C10: class-agnostic boundary
// ---------------------------------------------------------------------------

template <class T, class = void>
struct exposes_class_id : std::false_type {};
template <class T>
struct exposes_class_id<T, std::void_t<decltype(std::declval<T>().class_id)>> : std::true_type {};

static_assert(exposes_class_id<Sample>::value,
              "sampler-side samples are expected to carry their label");
static_assert(!exposes_class_id<ModelEpisode>::value,
              "the model-facing episode view must not expose class identifiers");

void criterion_class_agnostic(Check& c) {
  // Compile-time: ModelEpisode has no class_id member (static_asserts above).
  // Runtime: the stripped view carries images and co-seg masks only, and the
  // model consumes plain tensors.
  Dataset ds;
  Pcg32 rng(21);
  for (int cls = 0; cls < 2; ++cls) {
    for (int i = 0; i < 4; ++i) {
      Sample s;
      auto img = Tensor::zeros({3, 16, 16});
      for (float& v : img.values_mut()) v = rng.next_float();
      s.image = img;
      s.mask = Mask::zeros(16, 16);
      s.mask.at(1, 1) = 1;
      s.class_id = "c" + std::to_string(cls);
      ds.by_class[s.class_id].push_back(static_cast<int>(ds.samples.size()));
      ds.samples.push_back(std::move(s));
    }
  }
  for (const auto& [cls, idx] : ds.by_class) ds.classes.push_back(cls);

  Episode ep = sample_episode(ds, ds.classes, EpisodeConfig{3, 2, 2}, rng);
  ModelEpisode view = strip_labels(ep);
  c.expect(view.guide_images.size() == 3 && view.coseg_images.size() == 2 &&
               view.coseg_masks.size() == 2,
           "stripped view has unexpected contents");

  DviceModel model(BackboneConfig::reduced16(), 3);
  NoiseFn<float> nn = [](const Shape&) -> Tensor { throw ValueError("eval"); };
  auto masks = model.segment_episode(view.guide_images, view.coseg_images, RunMode::kEval, nn);
  c.expect(masks.size() == 2, "segmentation through the label-free view failed");
  c.note("ModelEpisode exposes no label field (compile-time) and drives the model end to end");
}

}  // namespace

int main(int argc, char** argv) {
  std::string suite = "all";
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg == "--suite" && i + 1 < argc) suite = argv[++i];
  }
  work_root = fs::temp_directory_path() / ("coseg_acceptance_" + suite);
  fs::remove_all(work_root);
  fs::create_directories(work_root);

  std::vector<Criterion> fast = {
      {"C1 gradient-suite", criterion_gradients},
      {"C2 closed-form-suite", criterion_closed_forms},
      {"C9 determinism-and-persistence", criterion_determinism},
      {"C10 class-agnostic-boundary", criterion_class_agnostic},
  };
  std::vector<Criterion> overfit = {
      {"C3 overfit-check", criterion_overfit},
  };
  std::vector<Criterion> generalization = {
      {"C4 few-shot-generalization", criterion_generalization},
      {"C5 outlier-robustness", criterion_outlier_robustness},
      {"C6 guide-steering", criterion_guide_steering},
      {"C7 attention-ablation", criterion_attention_ablation},
      {"C8 loss-trajectory", criterion_loss_trajectory},
  };

  std::vector<Criterion> selected;
  auto append = [&](const std::vector<Criterion>& group) {
    selected.insert(selected.end(), group.begin(), group.end());
  };
  if (suite == "fast") {
    append(fast);
  } else if (suite == "overfit") {
    append(overfit);
  } else if (suite == "generalization") {
    append(generalization);
  } else if (suite == "all") {
    append(fast);
    append(overfit);
    append(generalization);
  } else {
    std::fprintf(stderr, "unknown suite '%s'\n", suite.c_str());
    return 64;
  }

  int failures = 0;
  for (const Criterion& criterion : selected) {
    Check check;
    const auto start = std::chrono::steady_clock::now();
    try {
      criterion.body(check);
    } catch (const std::exception& e) {
      check.ok = false;
      check.detail = std::string("exception: ") + e.what();
    }
    double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] %s: %s (%.1f s)\n", check.ok ? "PASS" : "FAIL", criterion.name.c_str(),
                check.detail.c_str(), seconds);
    std::fflush(stdout);
    if (!check.ok) ++failures;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(selected.size()) - failures,
              selected.size());
  return failures;
}
