#pragma once

#include "ps/model.hpp"

namespace ps {

struct ConfusionMatrix {
  int64_t num_classes = 0;
  std::vector<int64_t> cells;  // [gt, pred] row-major

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int64_t k) : num_classes(k), cells(static_cast<size_t>(k * k), 0) {}
  void add(int64_t gt, int64_t pred) {
    if (gt == 255) return;  // ignore index
    ++cells[static_cast<size_t>(gt * num_classes + pred)];
  }
  void merge(const ConfusionMatrix& other) {
    for (size_t i = 0; i < cells.size(); ++i) cells[i] += other.cells[i];
  }
  int64_t total() const {
    int64_t t = 0;
    for (int64_t c : cells) t += c;
    return t;
  }
};

// Classes absent from both GT and prediction are excluded from the mean.
double miou(const ConfusionMatrix& conf, std::vector<double>* per_class = nullptr);

// score(c, x) = sum_q softmax(class_logits)[q, c] * sigmoid(mask_logits)[q, x]
// over the K real classes -> [B, K, h, w]
Tensor semantic_scores(const Tensor& class_logits, const Tensor& mask_logits);

// Runs a model on one crop and returns class-score maps at output stride.
using ScoreFn = std::function<Tensor(const Tensor& crop)>;  // [1,3,c,c] -> [1,K,h,w]

// Accumulates overlapping window scores (upsampled to full resolution) and
// divides by the per-pixel window count. crop >= image falls back to one
// whole-image evaluation.
Tensor sliding_window_scores(const ScoreFn& fn, const Tensor& image, int64_t crop,
                             int64_t stride, int64_t num_classes);

// argmax over classes of [1,K,H,W] -> row-major labels
std::vector<int64_t> argmax_labels(const Tensor& scores);

// SegModel adapter: forward in eval mode, aggregate to class scores, and
// bilinear-upsample to input resolution.
Tensor model_scores(SegModel& model, const Tensor& crop);

// Evaluates a directory-loaded dataset pair list; returns the confusion matrix.
ConfusionMatrix evaluate_images(SegModel& model, const std::vector<Tensor>& images,
                                const std::vector<std::vector<int64_t>>& labels,
                                int64_t crop, int64_t stride);

// median forward time in milliseconds
double benchmark_median_ms(const std::function<void()>& fn, int warmup, int repeats);

}  // namespace ps
