#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ps/gradcheck.hpp"
#include "ps/matcher.hpp"
#include "ps/train.hpp"

using namespace ps;

namespace {

double brute_force_best(const std::vector<double>& cost, int64_t rows, int64_t cols) {
  std::vector<int64_t> perm(static_cast<size_t>(cols));
  for (int64_t i = 0; i < cols; ++i) perm[static_cast<size_t>(i)] = i;
  double best = 1e300;
  do {
    double t = 0;
    for (int64_t r = 0; r < rows; ++r)
      t += cost[static_cast<size_t>(r * cols + perm[static_cast<size_t>(r)])];
    best = std::min(best, t);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

double assign_cost(const std::vector<double>& cost, const std::vector<int64_t>& a,
                   int64_t cols) {
  double t = 0;
  for (size_t r = 0; r < a.size(); ++r)
    t += cost[r * static_cast<size_t>(cols) + static_cast<size_t>(a[r])];
  return t;
}

}  // namespace

TEST_CASE("hungarian: fixed example and error path") {
  std::vector<double> cost = {1, 2, 2, 1};
  auto a = hungarian_min_assign(cost, 2, 2);
  CHECK(a == std::vector<int64_t>{0, 1});
  CHECK(assign_cost(cost, a, 2) == doctest::Approx(2.0));
  CHECK_THROWS_AS(hungarian_min_assign(cost, 2, 1), Error);
}

TEST_CASE("hungarian equals exhaustive permutation search (200 trials up to 6x6)") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    int64_t rows = rng.uniform_int(1, 6);
    int64_t cols = rng.uniform_int(rows, 6);
    std::vector<double> cost(static_cast<size_t>(rows * cols));
    for (auto& c : cost) c = rng.uniform(-5.0, 5.0);
    auto a = hungarian_min_assign(cost, rows, cols);
    std::vector<bool> used(static_cast<size_t>(cols), false);
    for (int64_t c : a) {
      CHECK(!used[static_cast<size_t>(c)]);
      used[static_cast<size_t>(c)] = true;
    }
    CHECK(assign_cost(cost, a, cols) ==
          doctest::Approx(brute_force_best(cost, rows, cols)).epsilon(1e-9));
  }
}

TEST_CASE("matcher picks the obviously perfect query") {
  // query 0 predicts class 1 with certainty and the exact mask
  Tensor cls = Tensor::from_vector({1, 2, 3}, {20, -20, -20, 0, 0, 0});
  Tensor cls2 = Tensor::from_vector({1, 2, 3}, {-20, 20, -20, 0, 0, 0});
  Tensor masks = Tensor::from_vector({1, 2, 2, 2}, {20, 20, -20, -20, 0, 0, 0, 0});
  GTSegmentation gt;
  gt.push_back({1, Tensor::from_vector({2, 2}, {1, 1, 0, 0})});
  auto pairs = match_queries(cls2, masks, 0, gt, LossWeights{});
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].first == 0);
  CHECK(pairs[0].second == 0);
}

TEST_CASE("mask_class_loss: saturation, dice zero, permutation invariance") {
  // perfect prediction at +-20 logits drives the loss under 0.01
  int64_t K = 2;
  MaskClassOutput out;
  Tensor cls = Tensor::from_vector({1, 3, 3}, {20, -20, -20,   // query 0 -> class 0
                                               -20, 20, -20,   // query 1 -> class 1
                                               -20, -20, 20}); // query 2 -> no-object
  std::vector<double> m(static_cast<size_t>(3 * 4), -20.0);
  for (int i = 0; i < 2; ++i) m[static_cast<size_t>(i)] = 20.0;          // query 0: left half
  for (int i = 2; i < 4; ++i) m[static_cast<size_t>(4 + i)] = 20.0;      // query 1: right half
  Tensor masks = Tensor::from_vector({1, 3, 2, 2}, m);
  out.class_logits.push_back(cls);
  out.mask_logits.push_back(masks);

  GTSegmentation gt;
  gt.push_back({0, Tensor::from_vector({2, 2}, {1, 1, 0, 0})});
  gt.push_back({1, Tensor::from_vector({2, 2}, {0, 0, 1, 1})});
  Tensor loss = mask_class_loss(out, {gt}, LossWeights{});
  CHECK(loss.item() < 0.01);

  // dice of identical masks contributes zero
  Tensor row = Tensor::from_vector({1, 4}, {30, 30, -30, -30});
  Tensor gtr = Tensor::from_vector({1, 4}, {1, 1, 0, 0});
  CHECK(dice_loss(row, gtr).item() == doctest::Approx(0.0).epsilon(1e-6));

  // permuting GT instance order leaves the loss unchanged
  GTSegmentation gt_rev = {gt[1], gt[0]};
  Tensor loss2 = mask_class_loss(out, {gt_rev}, LossWeights{});
  CHECK(loss.item() == doctest::Approx(loss2.item()).epsilon(1e-12));
  Tape::get().clear();
}

TEST_CASE("empty GT reduces to the class-only loss") {
  Rng rng(2);
  MaskClassOutput out;
  out.class_logits.push_back(Tensor::randn({1, 4, 3}, rng));
  out.mask_logits.push_back(Tensor::randn({1, 4, 2, 2}, rng));
  GTSegmentation none;
  Tensor loss = mask_class_loss(out, {none}, LossWeights{});
  CHECK(std::isfinite(loss.item()));
  Tape::get().clear();
}

TEST_CASE("total loss gradient matches finite differences") {
  DtypeGuard g64(DType::kF64);
  Rng rng(3);
  GTSegmentation gt;
  gt.push_back({0, Tensor::from_vector({2, 2}, {1, 0, 0, 0})});
  gt.push_back({2, Tensor::from_vector({2, 2}, {0, 0, 1, 1})});
  Tensor cls = Tensor::randn({1, 4, 4}, rng);
  Tensor masks = Tensor::randn({1, 4, 2, 2}, rng);

  double err = finite_difference_check(
      [&](const Tensor& x) {
        MaskClassOutput out;
        out.class_logits.push_back(reshape(x, {1, 4, 4}));
        out.mask_logits.push_back(masks);
        return mask_class_loss(out, {gt}, LossWeights{});
      },
      reshape(cls, {1, 16}), 1e-5);
  CHECK(err < 1e-5);

  err = finite_difference_check(
      [&](const Tensor& x) {
        MaskClassOutput out;
        out.class_logits.push_back(cls);
        out.mask_logits.push_back(reshape(x, {1, 4, 2, 2}));
        return mask_class_loss(out, {gt}, LossWeights{});
      },
      reshape(masks, {1, 16}), 1e-5);
  CHECK(err < 1e-5);
}

TEST_CASE("LR schedule: table values, monotonicity, endpoints") {
  LRSchedule s = build_lr_schedule(3e-5, 0.9, 10.0, 12);
  s.warmup_iters = 1500;
  s.total_iters = 80000;
  CHECK(s.scheduled_lr(s.head_group()) == doctest::Approx(3e-4).epsilon(1e-12));
  CHECK(s.scheduled_lr(12) == doctest::Approx(3e-5).epsilon(1e-12));
  CHECK(s.scheduled_lr(1) == doctest::Approx(3e-5 * std::pow(0.9, 11)).epsilon(1e-9));
  CHECK(s.scheduled_lr(1) == doctest::Approx(9.42e-6).epsilon(1e-3));
  CHECK(s.scheduled_lr(0) == doctest::Approx(8.47e-6).epsilon(1e-3));
  for (int g = 0; g < 12; ++g) CHECK(s.scheduled_lr(g) < s.scheduled_lr(g + 1));

  CHECK(s.lr_at(0, 5) == 0.0);
  double warm_end = s.lr_at(1500, 5);
  CHECK(warm_end == doctest::Approx(s.scheduled_lr(5) * (1.0 - 1500.0 / 80000.0)));
  CHECK(s.lr_at(80000, 5) == 0.0);
  CHECK_THROWS_AS(s.lr_at(80001, 5), Error);

  LRSchedule flat = build_lr_schedule(1e-4, 1.0, 2.0, 4);
  for (int g = 0; g <= 4; ++g) CHECK(flat.scheduled_lr(g) == doctest::Approx(1e-4));

  CHECK_THROWS_AS(build_lr_schedule(3e-5, 0.9, 1.0, 12), Error);  // s must be > 1
  CHECK_THROWS_AS(build_lr_schedule(3e-5, 1.5, 10.0, 12), Error);

  // head strictly dominates when s > 1/r^L
  CHECK(s.scheduled_lr(s.head_group()) > s.scheduled_lr(12));

  // literal direction flag: deep layers get the smaller lr
  LRSchedule lit = build_lr_schedule(3e-5, 0.9, 10.0, 12);
  lit.literal_direction = true;
  CHECK(lit.scheduled_lr(12) < lit.scheduled_lr(1));
  CHECK(lit.scheduled_lr(s.head_group()) == doctest::Approx(3e-4));
}

TEST_CASE("parameter grouping by name") {
  CHECK(param_group_of("encoder.patch_embed.weight", 12) == 0);
  CHECK(param_group_of("encoder.pos_embed", 12) == 0);
  CHECK(param_group_of("encoder.cls_token", 12) == 0);
  CHECK(param_group_of("encoder.blocks.0.attn.q.weight", 12) == 1);
  CHECK(param_group_of("encoder.blocks.11.mlp.fc2.bias", 12) == 12);
  CHECK(param_group_of("encoder.blocks.3.attn.rel_bias_table", 12) == 4);
  CHECK(param_group_of("encoder.norm.weight", 12) == 12);
  CHECK(param_group_of("decoder.layers.0.ffn1.weight", 12) == 13);
  CHECK(param_group_of("refiner.conv_refine.weight", 12) == 13);
}

TEST_CASE("gradient clipping: scaling rule and norm bound") {
  Tensor p = Tensor::zeros({4}).set_requires_grad(true);
  backward(mul_scalar(sum(mul(p, Tensor::from_vector({4}, {0.5, 0.5, 0.5, 0.5}))), 1.0));
  ParamList ps = {{"p", p, true, false}};
  double norm = clip_grad_norm(ps, 0.01);
  CHECK(norm == doctest::Approx(1.0));  // grads all 0.5, norm = 1
  double after = 0;
  for (int64_t i = 0; i < 4; ++i) {
    double g = p.impl()->grad->get(i);
    after += g * g;
  }
  CHECK(std::sqrt(after) <= 0.01 + 1e-9);
  CHECK(std::sqrt(after) == doctest::Approx(0.01).epsilon(1e-4));
  Tape::get().clear();
}

TEST_CASE("adamw: first-step size, zero lr, weight-decay off") {
  auto one_step = [](double lr, double wd) {
    Tensor p = Tensor::full({1}, 1.0).set_requires_grad(true);
    backward(sum(p));  // grad = 1
    ParamList ps = {{"p", p, true, false}};
    AdamWConfig cfg;
    cfg.weight_decay = wd;
    AdamW opt(ps, cfg);
    opt.step([&](size_t) { return lr; });
    Tape::get().clear();
    return p.item();
  };
  // bias-corrected first step moves by ~lr
  CHECK(one_step(0.1, 0.0) == doctest::Approx(1.0 - 0.1).epsilon(1e-6));
  // decoupled weight decay subtracts lr*wd*x on top
  CHECK(one_step(0.1, 0.05) == doctest::Approx(1.0 - 0.1 - 0.1 * 0.05 * 1.0).epsilon(1e-6));
  CHECK(one_step(0.0, 0.05) == doctest::Approx(1.0));
}

TEST_CASE("train steps: determinism and zero-lr invariance") {
  ModelConfig cfg = tiny_config(Variant::kPlainSeg, 3);
  cfg.vit.depth = 2;
  cfg.decoder_layers = 2;
  auto make_batch = [&](Rng& rng) {
    Tensor img = Tensor::randn({2, 3, 64, 64}, rng, 0.5);
    GTSegmentation gt;
    Tensor mask = Tensor::zeros({32, 32});
    for (int64_t i = 0; i < 512; ++i) mask.impl()->value.set(i, 1.0);
    gt.push_back({1, mask});
    Tensor mask2 = Tensor::zeros({32, 32});
    for (int64_t i = 512; i < 1024; ++i) mask2.impl()->value.set(i, 1.0);
    gt.push_back({0, mask2});
    return std::make_pair(img, std::vector<GTSegmentation>{gt, gt});
  };

  auto run_twice = [&](double lr) {
    std::vector<double> losses;
    for (int run = 0; run < 2; ++run) {
      SegModel model(cfg);
      LRSchedule sched = build_lr_schedule(lr > 0 ? lr : 1e-9, 0.9, 10.0, cfg.vit.depth);
      sched.warmup_iters = 0;
      sched.total_iters = 100;
      if (lr == 0.0) sched.base_lr = 0.0;
      Trainer tr(model, sched, AdamWConfig{}, LossWeights{}, 0.01);
      Rng rng(7);
      auto [img, gts] = make_batch(rng);
      for (int it = 0; it < 3; ++it) {
        TrainStats st = tr.step(img, gts, it);
        losses.push_back(st.loss);
      }
    }
    return losses;
  };
  auto traces = run_twice(1e-4);
  CHECK(traces[0] == traces[3]);  // identical runs, bit-for-bit
  CHECK(traces[1] == traces[4]);
  CHECK(traces[2] == traces[5]);

  // zero lr leaves parameters unchanged
  SegModel model(cfg);
  auto before = model.params();
  std::vector<std::vector<double>> snap;
  for (auto& p : before) snap.push_back(p.tensor.to_vector());
  LRSchedule sched = build_lr_schedule(1e-9, 0.9, 10.0, cfg.vit.depth);
  sched.base_lr = 0.0;
  sched.warmup_iters = 0;
  sched.total_iters = 100;
  Trainer tr(model, sched, AdamWConfig{}, LossWeights{}, 0.01);
  Rng rng(7);
  auto [img, gts] = make_batch(rng);
  tr.step(img, gts, 0);
  auto after = model.params();
  for (size_t i = 0; i < after.size(); ++i)
    if (after[i].trainable) CHECK(after[i].tensor.to_vector() == snap[i]);
}

TEST_CASE("single-image overfit drives the loss down 5x within 50 steps") {
  ModelConfig cfg = tiny_config(Variant::kPlainSeg, 3);
  cfg.vit.depth = 2;
  cfg.decoder_layers = 2;
  cfg.vit.img_size = 32;
  cfg.vit.patch_size = 8;
  SegModel model(cfg);
  Rng rng(11);
  Tensor img = Tensor::randn({1, 3, 32, 32}, rng, 0.5);
  GTSegmentation gt;
  Tensor mask = Tensor::zeros({16, 16});
  for (int64_t i = 0; i < 128; ++i) mask.impl()->value.set(i, 1.0);
  gt.push_back({1, mask});
  Tensor mask2 = Tensor::zeros({16, 16});
  for (int64_t i = 128; i < 256; ++i) mask2.impl()->value.set(i, 1.0);
  gt.push_back({2, mask2});

  LRSchedule sched = build_lr_schedule(5e-4, 0.9, 4.0, cfg.vit.depth);
  sched.warmup_iters = 10;
  sched.total_iters = 1000;  // far endpoint keeps the poly factor near 1
  Trainer tr(model, sched, AdamWConfig{}, LossWeights{}, 0.01);
  double first = 0, last = 0;
  for (int it = 0; it < 50; ++it) {
    TrainStats st = tr.step(img, {gt}, it);
    if (it == 0) first = st.loss;
    last = st.loss;
  }
  CHECK(last < 0.2 * first);
}
