#pragma once

#include "ps/loss.hpp"
#include "ps/model.hpp"
#include "ps/optim.hpp"
#include "ps/schedule.hpp"

namespace ps {

struct TrainStats {
  double loss = 0.0;
  double grad_norm = 0.0;
};

class Trainer {
 public:
  Trainer(SegModel& model, LRSchedule sched, AdamWConfig opt_cfg, LossWeights weights,
          double grad_clip);

  // Mask-classification step. gts are per-image, at mask resolution.
  TrainStats step(const Tensor& images, const std::vector<GTSegmentation>& gts,
                  int64_t iter);
  // Per-pixel CE step for linear / simple-upsampling variants; labels are
  // flat [B*h*w] at the logit resolution, 255 ignored.
  TrainStats step_pixel(const Tensor& images, const std::vector<int64_t>& labels,
                        int64_t iter);

  double lr_of_param(size_t i, int64_t iter) const {
    return sched_.lr_at(iter, groups_[i]);
  }
  AdamW& optimizer() { return opt_; }
  const LRSchedule& schedule() const { return sched_; }
  const std::vector<int>& param_groups() const { return groups_; }

 private:
  TrainStats apply(const Tensor& loss, int64_t iter);
  SegModel& model_;
  AdamW opt_;
  LRSchedule sched_;
  LossWeights weights_;
  double grad_clip_;
  std::vector<int> groups_;  // per optimizer param
};

}  // namespace ps
