#include "ps/infer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace ps {

double miou(const ConfusionMatrix& conf, std::vector<double>* per_class) {
  int64_t k = conf.num_classes;
  PS_CHECK(k > 0 && conf.total() > 0, "miou: empty confusion matrix");
  if (per_class) per_class->assign(static_cast<size_t>(k), -1.0);
  double acc = 0.0;
  int64_t counted = 0;
  for (int64_t c = 0; c < k; ++c) {
    int64_t tp = conf.cells[static_cast<size_t>(c * k + c)];
    int64_t fp = 0, fn = 0;
    for (int64_t o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += conf.cells[static_cast<size_t>(o * k + c)];
      fn += conf.cells[static_cast<size_t>(c * k + o)];
    }
    int64_t denom = tp + fp + fn;
    if (denom == 0) continue;  // class absent everywhere
    double iou = static_cast<double>(tp) / static_cast<double>(denom);
    if (per_class) (*per_class)[static_cast<size_t>(c)] = iou;
    acc += iou;
    ++counted;
  }
  PS_CHECK(counted > 0, "miou: no scored classes");
  return acc / static_cast<double>(counted);
}

Tensor semantic_scores(const Tensor& class_logits, const Tensor& mask_logits) {
  int64_t B = class_logits.dim(0), K = class_logits.dim(2) - 1;
  int64_t h = mask_logits.dim(2), w = mask_logits.dim(3);
  Tensor probs = softmax(class_logits);                   // [B,Nq,K+1]
  Tensor real = slice(probs, 2, 0, K);                    // drop no-object
  Tensor masks = sigmoid(reshape(mask_logits, {B, mask_logits.dim(1), h * w}));
  Tensor scores = bmm(real, masks, true, false);          // [B,K,hw]
  return reshape(scores, {B, K, h, w});
}

std::vector<int64_t> argmax_labels(const Tensor& scores) {
  PS_CHECK(scores.ndim() == 4 && scores.dim(0) == 1, "argmax_labels: expect [1,K,H,W]");
  int64_t K = scores.dim(1), hw = scores.dim(2) * scores.dim(3);
  std::vector<int64_t> out(static_cast<size_t>(hw));
  for (int64_t x = 0; x < hw; ++x) {
    double best = scores.impl()->value.get(x);
    int64_t arg = 0;
    for (int64_t c = 1; c < K; ++c) {
      double v = scores.impl()->value.get(c * hw + x);
      if (v > best) {
        best = v;
        arg = c;
      }
    }
    out[static_cast<size_t>(x)] = arg;
  }
  return out;
}

Tensor model_scores(SegModel& model, const Tensor& crop) {
  NoGradGuard ng;
  EvalGuard eg;
  SegModel::ForwardResult fwd = model.forward(crop);
  Tensor scores;
  if (model.cfg.is_mask_cls()) {
    scores = semantic_scores(fwd.mask_cls.class_logits.back(), fwd.mask_cls.mask_logits.back());
  } else {
    scores = softmax(permute(fwd.pixel_logits, {0, 2, 3, 1}));
    scores = permute(scores, {0, 3, 1, 2});
  }
  return bilinear_resize(scores, crop.dim(2), crop.dim(3));
}

Tensor sliding_window_scores(const ScoreFn& fn, const Tensor& image, int64_t crop,
                             int64_t stride, int64_t num_classes) {
  PS_CHECK(image.ndim() == 4 && image.dim(0) == 1, "sliding window: expect [1,3,H,W]");
  PS_CHECK(stride >= 1 && stride <= crop, "sliding window: need 1 <= stride <= crop");
  int64_t H = image.dim(2), W = image.dim(3);
  if (crop >= H && crop >= W) return fn(image);  // whole-image path

  NoGradGuard ng;
  Tensor acc = Tensor::zeros({1, num_classes, H, W});
  Tensor cnt = Tensor::zeros({1, 1, H, W});
  int64_t ch = std::min(crop, H), cw = std::min(crop, W);
  int64_t gy = H > ch ? (H - ch + stride - 1) / stride + 1 : 1;
  int64_t gx = W > cw ? (W - cw + stride - 1) / stride + 1 : 1;
  for (int64_t iy = 0; iy < gy; ++iy) {
    int64_t y0 = std::min(iy * stride, H - ch);
    for (int64_t ix = 0; ix < gx; ++ix) {
      int64_t x0 = std::min(ix * stride, W - cw);
      Tensor window = slice(slice(image, 2, y0, ch), 3, x0, cw);
      Tensor s = fn(window);  // [1,K,ch,cw]
      PS_CHECK(s.dim(2) == ch && s.dim(3) == cw, "sliding window: score fn size mismatch");
      for (int64_t c = 0; c < num_classes; ++c)
        for (int64_t y = 0; y < ch; ++y)
          for (int64_t x = 0; x < cw; ++x) {
            int64_t dst = (c * H + y0 + y) * W + x0 + x;
            acc.impl()->value.set(dst, acc.impl()->value.get(dst) +
                                           s.impl()->value.get((c * ch + y) * cw + x));
          }
      for (int64_t y = 0; y < ch; ++y)
        for (int64_t x = 0; x < cw; ++x) {
          int64_t dst = (y0 + y) * W + x0 + x;
          cnt.impl()->value.set(dst, cnt.impl()->value.get(dst) + 1.0);
        }
    }
  }
  for (int64_t c = 0; c < num_classes; ++c)
    for (int64_t i = 0; i < H * W; ++i) {
      double d = cnt.impl()->value.get(i);
      PS_CHECK(d > 0, "sliding window: uncovered pixel");
      acc.impl()->value.set(c * H * W + i, acc.impl()->value.get(c * H * W + i) / d);
    }
  return acc;
}

ConfusionMatrix evaluate_images(SegModel& model, const std::vector<Tensor>& images,
                                const std::vector<std::vector<int64_t>>& labels,
                                int64_t crop, int64_t stride) {
  PS_CHECK(images.size() == labels.size(), "evaluate: image/label count mismatch");
  ConfusionMatrix conf(model.cfg.num_classes);
  for (size_t i = 0; i < images.size(); ++i) {
    Tensor scores = sliding_window_scores(
        [&](const Tensor& cropped) { return model_scores(model, cropped); }, images[i],
        crop, stride, model.cfg.num_classes);
    std::vector<int64_t> pred = argmax_labels(scores);
    PS_CHECK(pred.size() == labels[i].size(), "evaluate: label size mismatch");
    for (size_t x = 0; x < pred.size(); ++x) conf.add(labels[i][x], pred[x]);
    Tape::get().clear();
  }
  return conf;
}

double benchmark_median_ms(const std::function<void()>& fn, int warmup, int repeats) {
  PS_CHECK(repeats >= 1, "benchmark: repeats must be >= 1");
  for (int i = 0; i < warmup; ++i) fn();
  std::vector<double> times;
  times.reserve(static_cast<size_t>(repeats));
  for (int i = 0; i < repeats; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    fn();
    auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  size_t n = times.size();
  return n % 2 == 1 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
}

}  // namespace ps
