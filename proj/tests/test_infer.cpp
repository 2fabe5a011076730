#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <thread>

#include "ps/costing.hpp"
#include "ps/infer.hpp"

using namespace ps;

TEST_CASE("semantic inference: single query, two regions, argmax invariance") {
  // one query certain of class 3, positive mask -> every pixel class 3
  int64_t K = 5;
  Tensor cls = Tensor::full({1, 1, K + 1}, -20.0);
  cls.impl()->value.set(3, 20.0);
  Tensor mask = Tensor::full({1, 1, 2, 2}, 8.0);
  Tensor scores = semantic_scores(cls, mask);
  CHECK(scores.shape() == Shape{1, K, 2, 2});
  auto labels = argmax_labels(scores);
  for (int64_t v : labels) CHECK(v == 3);

  // two disjoint perfect queries give the exact two-region map
  Tensor cls2 = Tensor::full({1, 2, 3}, -20.0);
  cls2.impl()->value.set(0, 20.0);      // query 0 -> class 0
  cls2.impl()->value.set(3 + 1, 20.0);  // query 1 -> class 1
  std::vector<double> m(2 * 4, -20.0);
  m[0] = m[1] = 20.0;          // query 0 owns the top row
  m[4 + 2] = m[4 + 3] = 20.0;  // query 1 owns the bottom row
  Tensor masks2 = Tensor::from_vector({1, 2, 2, 2}, m);
  auto labels2 = argmax_labels(semantic_scores(cls2, masks2));
  CHECK(labels2 == std::vector<int64_t>{0, 0, 1, 1});

  // positive scaling leaves the argmax unchanged
  Tensor s1 = semantic_scores(cls2, masks2);
  Tensor s2 = mul_scalar(s1, 37.5);
  CHECK(argmax_labels(s1) == argmax_labels(s2));
}

TEST_CASE("sliding window: whole-image fallback and constant stub") {
  Tensor image = Tensor::zeros({1, 3, 8, 8});
  int calls = 0;
  ScoreFn stub = [&](const Tensor& crop) {
    ++calls;
    Tensor s = Tensor::zeros({1, 2, crop.dim(2), crop.dim(3)});
    for (int64_t i = 0; i < s.numel(); ++i) s.impl()->value.set(i, i < s.numel() / 2 ? 0.7 : 0.3);
    return s;
  };
  Tensor whole = sliding_window_scores(stub, image, 8, 5, 2);
  CHECK(calls == 1);  // crop >= image goes through the whole-image path
  Tensor strided = sliding_window_scores(stub, image, 4, 2, 2);
  CHECK(calls > 2);
  for (int64_t i = 0; i < whole.numel(); ++i)
    CHECK(strided.impl()->value.get(i) == doctest::Approx(whole.impl()->value.get(i)));
  CHECK_THROWS_AS(sliding_window_scores(stub, image, 4, 5, 2), Error);
}

TEST_CASE("overlap averaging matches the hand-computed count map") {
  // stub returns the window's top-left corner coordinate as the score
  Tensor image = Tensor::zeros({1, 3, 6, 6});
  std::vector<std::pair<int64_t, int64_t>> seen;
  int64_t call = 0;
  ScoreFn stub = [&](const Tensor& crop) {
    Tensor s = Tensor::full({1, 1, crop.dim(2), crop.dim(3)},
                            static_cast<double>(100 + call));
    ++call;
    return s;
  };
  // crop 4, stride 2 on 6 -> window origins {0, 2} x {0, 2}, 4 windows
  Tensor acc = sliding_window_scores(stub, image, 4, 2, 1);
  // center pixels (2..3, 2..3) are covered by all four windows
  double center = acc.at({0, 0, 3, 3});
  CHECK(center == doctest::Approx((100 + 101 + 102 + 103) / 4.0));
  // corner (0,0) only by window 0
  CHECK(acc.at({0, 0, 0, 0}) == doctest::Approx(100.0));
  // (0, 5) only by windows covering columns 2..5 in the top row -> window 1
  CHECK(acc.at({0, 0, 0, 5}) == doctest::Approx(101.0));
}

TEST_CASE("stride == crop tiles the image exactly, each pixel scored once") {
  Tensor image = Tensor::zeros({1, 3, 8, 8});
  int64_t call = 0;
  ScoreFn stub = [&](const Tensor& crop) {
    return Tensor::full({1, 1, crop.dim(2), crop.dim(3)}, static_cast<double>(call++));
  };
  Tensor acc = sliding_window_scores(stub, image, 4, 4, 1);
  // non-overlapping 2x2 grid of windows; every pixel carries exactly its
  // window's value (count 1, no averaging)
  CHECK(call == 4);
  CHECK(acc.at({0, 0, 0, 0}) == 0.0);
  CHECK(acc.at({0, 0, 0, 7}) == 1.0);
  CHECK(acc.at({0, 0, 7, 0}) == 2.0);
  CHECK(acc.at({0, 0, 7, 7}) == 3.0);
}

TEST_CASE("mIoU: perfect, quadrant swap, absent class, relabeling") {
  ConfusionMatrix perfect(3);
  perfect.add(0, 0);
  perfect.add(1, 1);
  CHECK(miou(perfect) == doctest::Approx(1.0));

  // GT: left half 0, right half 1; prediction swaps the bottom half
  ConfusionMatrix conf(2);
  int64_t n = 8;
  std::vector<int64_t> gt(static_cast<size_t>(n * n)), pred(gt.size());
  for (int64_t y = 0; y < n; ++y)
    for (int64_t x = 0; x < n; ++x) {
      int64_t g = x < n / 2 ? 0 : 1;
      int64_t p = y < n / 2 ? g : 1 - g;
      gt[static_cast<size_t>(y * n + x)] = g;
      pred[static_cast<size_t>(y * n + x)] = p;
    }
  for (size_t i = 0; i < gt.size(); ++i) conf.add(gt[i], pred[i]);
  // brute-force oracle over the same arrays
  for (int64_t c = 0; c < 2; ++c) {
    int64_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] == c && pred[i] == c) ++tp;
      if (gt[i] != c && pred[i] == c) ++fp;
      if (gt[i] == c && pred[i] != c) ++fn;
    }
    CHECK(static_cast<double>(tp) / static_cast<double>(tp + fp + fn) ==
          doctest::Approx(1.0 / 3.0));
  }
  CHECK(miou(conf) == doctest::Approx(1.0 / 3.0));

  // class absent from both GT and prediction is excluded
  ConfusionMatrix sparse(3);
  sparse.add(0, 0);
  sparse.add(1, 1);
  sparse.add(1, 0);
  std::vector<double> per_class;
  double m = miou(sparse, &per_class);
  CHECK(per_class[2] == -1.0);
  CHECK(m == doctest::Approx((1.0 / 2.0 + 1.0 / 2.0) / 2.0));

  // ignore label 255 never lands in the matrix
  ConfusionMatrix ig(2);
  ig.add(255, 1);
  ig.add(0, 0);
  CHECK(ig.total() == 1);

  // consistent relabeling leaves the mean unchanged
  ConfusionMatrix relabeled(2);
  for (size_t i = 0; i < gt.size(); ++i) conf.num_classes, relabeled.add(1 - gt[i], 1 - pred[i]);
  CHECK(miou(relabeled) == doctest::Approx(miou(conf)));
}

TEST_CASE("sliding window equals whole image bit-exactly on a real model") {
  ModelConfig cfg = tiny_config(Variant::kPlainSeg, 3);
  cfg.vit.depth = 2;
  cfg.decoder_layers = 2;
  SegModel model(cfg);
  Rng rng(3);
  Tensor image = Tensor::randn({1, 3, 64, 64}, rng, 0.5);
  ScoreFn fn = [&](const Tensor& crop) { return model_scores(model, crop); };
  Tensor a = sliding_window_scores(fn, image, 64, 43, 3);
  Tensor b = model_scores(model, image);
  for (int64_t i = 0; i < a.numel(); ++i)
    CHECK(a.impl()->value.get(i) == b.impl()->value.get(i));  // bit-exact
  Tape::get().clear();
}

TEST_CASE("benchmark: single repeat and median robustness") {
  int n = 0;
  double t = benchmark_median_ms([&] { ++n; }, 0, 1);
  CHECK(n == 1);
  CHECK(t >= 0.0);

  int call = 0;
  double med = benchmark_median_ms(
      [&] {
        // one slow outlier among fast runs
        std::this_thread::sleep_for(std::chrono::milliseconds(call == 0 ? 30 : 1));
        ++call;
      },
      0, 5);
  CHECK(med < 15.0);
}

TEST_CASE("structural efficiency: slim vs wide decoder accounting") {
  ModelConfig slim = plainseg_base_config();
  ModelConfig wide = plainseg_base_config();
  wide.decoder_width = 768;
  wide.ffn_dim = 768 * 8;
  CostReport rs = analyze_cost(slim, 640, 640);
  CostReport rw = analyze_cost(wide, 640, 640);
  CHECK(rs.total_params < rw.total_params);
  CHECK(rs.rp_percent < 0.5 * rw.rp_percent);
}

TEST_CASE("analytic count matches instantiated models (tiny configs)") {
  for (Variant v : {Variant::kLinear, Variant::kSimpleUpsample, Variant::kPlainSeg,
                    Variant::kPlainSegHier}) {
    ModelConfig cfg = tiny_config(v, 4);
    SegModel model(cfg);
    CostReport r = analyze_cost(cfg, cfg.vit.img_size, cfg.vit.img_size);
    CHECK(model.num_parameters() == r.total_params);
  }
}

TEST_CASE("pointwise conv MAC arithmetic") {
  // 1x1 conv 768 -> 150 at 128^2
  double g = 128.0 * 128.0 * 768.0 * 150.0 / 1e9;
  CHECK(g == doctest::Approx(1.887).epsilon(1e-3));
}

TEST_CASE("slim decoder is measurably faster than the wide variant") {
  ModelConfig slim = tiny_config(Variant::kPlainSeg, 3);
  slim.vit.depth = 1;
  slim.decoder_layers = 2;
  ModelConfig wide = slim;
  wide.decoder_width = 256;  // 8x the slim width
  wide.ffn_dim = 2048;
  wide.decoder_heads = 8;
  SegModel ms(slim), mw(wide);
  Rng rng(1);
  Tensor img = Tensor::randn({1, 3, 64, 64}, rng, 0.5);
  auto run = [&](SegModel& m) {
    return benchmark_median_ms(
        [&] {
          NoGradGuard ng;
          EvalGuard eg;
          m.forward(img);
          Tape::get().clear();
        },
        1, 5);
  };
  double ts = run(ms), tw = run(mw);
  CHECK(ts < tw);  // relative ordering only; absolute times are machine-local
}

TEST_CASE("decoder GMACs scale with the square of the input side") {
  double g1 = simple_upsample_decoder_gmacs(64, 10, 128, 128, 16);
  double g2 = simple_upsample_decoder_gmacs(64, 10, 256, 256, 16);
  CHECK(g2 == doctest::Approx(4.0 * g1).epsilon(1e-9));
}
