#include "ps/loss.hpp"

#include <cmath>

#include "ps/matcher.hpp"

namespace ps {

namespace {

// row softmax of one [Nq, C] slice read straight from storage
std::vector<double> class_probs(const Tensor& class_logits, int64_t b) {
  int64_t Nq = class_logits.dim(1), C = class_logits.dim(2);
  std::vector<double> probs(static_cast<size_t>(Nq * C));
  for (int64_t q = 0; q < Nq; ++q) {
    int64_t base = (b * Nq + q) * C;
    double mx = class_logits.impl()->value.get(base);
    for (int64_t c = 1; c < C; ++c) mx = std::max(mx, class_logits.impl()->value.get(base + c));
    double sum = 0.0;
    for (int64_t c = 0; c < C; ++c) {
      double e = std::exp(class_logits.impl()->value.get(base + c) - mx);
      probs[static_cast<size_t>(q * C + c)] = e;
      sum += e;
    }
    for (int64_t c = 0; c < C; ++c) probs[static_cast<size_t>(q * C + c)] /= sum;
  }
  return probs;
}

}  // namespace

std::vector<std::pair<int64_t, int64_t>> match_queries(const Tensor& class_logits,
                                                       const Tensor& mask_logits,
                                                       int64_t b, const GTSegmentation& gt,
                                                       const LossWeights& w) {
  int64_t Nq = class_logits.dim(1), C = class_logits.dim(2);
  int64_t hw = mask_logits.dim(2) * mask_logits.dim(3);
  int64_t M = static_cast<int64_t>(gt.size());
  if (M == 0) return {};
  PS_CHECK(M <= Nq, "matcher: more GT masks (" << M << ") than queries (" << Nq << ")");

  std::vector<double> probs = class_probs(class_logits, b);
  // cost[m, q]: rows = GT (each must be assigned), cols = queries
  std::vector<double> cost(static_cast<size_t>(M * Nq));
  for (int64_t m = 0; m < M; ++m) {
    const GTInstance& inst = gt[static_cast<size_t>(m)];
    PS_CHECK(inst.mask.numel() == hw, "matcher: GT mask resolution mismatch");
    for (int64_t q = 0; q < Nq; ++q) {
      int64_t base = (b * Nq + q) * hw;
      double bce = 0.0, inter = 0.0, psum = 0.0, gsum = 0.0;
      for (int64_t x = 0; x < hw; ++x) {
        double lg = mask_logits.impl()->value.get(base + x);
        double g = inst.mask.impl()->value.get(x);
        bce += std::max(lg, 0.0) - lg * g + std::log1p(std::exp(-std::abs(lg)));
        double p = 1.0 / (1.0 + std::exp(-lg));
        inter += p * g;
        psum += p;
        gsum += g;
      }
      bce /= static_cast<double>(hw);
      double dice = 1.0 - (2.0 * inter + 1.0) / (psum + gsum + 1.0);
      double pcls = probs[static_cast<size_t>(q * C + inst.class_id)];
      cost[static_cast<size_t>(m * Nq + q)] = w.cls * (-pcls) + w.bce * bce + w.dice * dice;
    }
  }
  std::vector<int64_t> assign = hungarian_min_assign(cost, M, Nq);
  std::vector<std::pair<int64_t, int64_t>> pairs;
  pairs.reserve(static_cast<size_t>(M));
  for (int64_t m = 0; m < M; ++m) pairs.emplace_back(assign[static_cast<size_t>(m)], m);
  return pairs;
}

Tensor dice_loss(const Tensor& mask_logits_row, const Tensor& gt_row) {
  Tensor p = sigmoid(mask_logits_row);
  Tensor inter = sum(mul(p, gt_row));
  Tensor denom = add(sum(p), sum(gt_row));
  Tensor ratio = div(add_scalar(mul_scalar(inter, 2.0), 1.0), add_scalar(denom, 1.0));
  return add_scalar(neg(ratio), 1.0);
}

Tensor mask_class_loss(const MaskClassOutput& out, const std::vector<GTSegmentation>& gts,
                       const LossWeights& w) {
  PS_CHECK(out.count() > 0, "loss: empty prediction list");
  int64_t B = out.class_logits[0].dim(0);
  int64_t Nq = out.class_logits[0].dim(1);
  int64_t C = out.class_logits[0].dim(2);
  int64_t K = C - 1;
  PS_CHECK(static_cast<int64_t>(gts.size()) == B, "loss: GT batch mismatch");

  std::vector<double> class_weights(static_cast<size_t>(C), 1.0);
  class_weights[static_cast<size_t>(K)] = w.no_object;

  int64_t num_masks = 0;
  for (const auto& gt : gts) num_masks += static_cast<int64_t>(gt.size());
  double mask_norm = 1.0 / static_cast<double>(std::max<int64_t>(num_masks, 1));

  Tensor total;
  for (size_t l = 0; l < out.count(); ++l) {
    const Tensor& cls = out.class_logits[l];
    const Tensor& msk = out.mask_logits[l];
    int64_t h = msk.dim(2), wd = msk.dim(3);

    std::vector<int64_t> targets(static_cast<size_t>(B * Nq), K);
    std::vector<Tensor> matched_rows;
    std::vector<Tensor> matched_gt;
    for (int64_t b = 0; b < B; ++b) {
      auto pairs = match_queries(cls, msk, b, gts[static_cast<size_t>(b)], w);
      for (auto [q, m] : pairs) {
        const GTInstance& inst = gts[static_cast<size_t>(b)][static_cast<size_t>(m)];
        targets[static_cast<size_t>(b * Nq + q)] = inst.class_id;
        Tensor row = reshape(slice(slice(msk, 0, b, 1), 1, q, 1), {1, h * wd});
        matched_rows.push_back(row);
        matched_gt.push_back(reshape(inst.mask, {1, h * wd}));
      }
    }

    Tensor ce = cross_entropy(reshape(cls, {B * Nq, C}), targets, class_weights);
    Tensor term = mul_scalar(ce, w.cls);
    if (!matched_rows.empty()) {
      Tensor rows = matched_rows.size() == 1 ? matched_rows[0] : concat(matched_rows, 0);
      Tensor gtm = matched_gt.size() == 1 ? matched_gt[0] : concat(matched_gt, 0);
      Tensor bce = bce_with_logits(rows, gtm);
      // mean over pixels per mask, summed over masks, / num_masks
      term = add(term, mul_scalar(bce, w.bce * static_cast<double>(matched_rows.size()) * mask_norm));
      Tensor dsum;
      for (size_t i = 0; i < matched_rows.size(); ++i) {
        Tensor d = dice_loss(matched_rows[i], matched_gt[i]);
        dsum = dsum.defined() ? add(dsum, d) : d;
      }
      term = add(term, mul_scalar(dsum, w.dice * mask_norm));
    }
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

Tensor pixel_ce_loss(const Tensor& logits, const std::vector<int64_t>& labels) {
  int64_t B = logits.dim(0), K = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  PS_CHECK(static_cast<int64_t>(labels.size()) == B * h * w, "pixel loss: label count mismatch");
  Tensor flat = reshape(permute(logits, {0, 2, 3, 1}), {B * h * w, K});
  std::vector<int64_t> keep;
  std::vector<int64_t> targets;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 255) continue;
    PS_CHECK(labels[i] >= 0 && labels[i] < K, "pixel loss: label out of range");
    keep.push_back(static_cast<int64_t>(i));
    targets.push_back(labels[i]);
  }
  PS_CHECK(!keep.empty(), "pixel loss: all pixels ignored");
  Tensor rows = gather_rows(flat, keep);
  return cross_entropy(rows, targets, std::vector<double>(static_cast<size_t>(K), 1.0));
}

}  // namespace ps
