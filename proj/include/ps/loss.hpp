#pragma once

#include "ps/mask_decoder.hpp"

namespace ps {

// Per-image ground truth in the semantic setting: one binary mask per class
// present, at the model's mask resolution. Masks are 0/1 and disjoint.
struct GTInstance {
  int64_t class_id;
  Tensor mask;  // [h, w]
};
using GTSegmentation = std::vector<GTInstance>;

struct LossWeights {
  double cls = 2.0;
  double bce = 5.0;
  double dice = 5.0;
  double no_object = 0.1;
};

// Hungarian matching of queries to GT for one image and one prediction.
// Costs are evaluated on detached values. Returns (query, gt index) pairs.
std::vector<std::pair<int64_t, int64_t>> match_queries(const Tensor& class_logits,
                                                       const Tensor& mask_logits,
                                                       int64_t batch_index,
                                                       const GTSegmentation& gt,
                                                       const LossWeights& w);

// Deep-supervision mask-classification loss over all predictions:
// weighted CE over K+1 classes (no-object weight w.no_object) plus dense
// BCE and Dice on matched masks, normalized by the number of GT masks.
Tensor mask_class_loss(const MaskClassOutput& out,
                       const std::vector<GTSegmentation>& gts, const LossWeights& w);

// 1 - (2*sum(p*g)+1) / (sum(p)+sum(g)+1) with p = sigmoid(logits)
Tensor dice_loss(const Tensor& mask_logits_row, const Tensor& gt_row);

// Per-pixel cross entropy for the linear / simple-upsampling decoders.
// logits [B,K,h,w]; labels flat row-major [B*h*w], 255 = ignore.
Tensor pixel_ce_loss(const Tensor& logits, const std::vector<int64_t>& labels);

}  // namespace ps
