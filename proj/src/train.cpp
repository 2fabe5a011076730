#include "ps/train.hpp"

namespace ps {

Trainer::Trainer(SegModel& model, LRSchedule sched, AdamWConfig opt_cfg,
                 LossWeights weights, double grad_clip)
    : model_(model),
      opt_(model.params(), opt_cfg),
      sched_(std::move(sched)),
      weights_(weights),
      grad_clip_(grad_clip) {
  groups_.reserve(opt_.params().size());
  for (const NamedParam& p : opt_.params())
    groups_.push_back(param_group_of(p.name, model_.cfg.vit.depth));
}

TrainStats Trainer::apply(const Tensor& loss, int64_t iter) {
  backward(loss);
  TrainStats stats;
  stats.loss = loss.item();
  stats.grad_norm = clip_grad_norm(opt_.params(), grad_clip_);
  opt_.step([&](size_t i) { return lr_of_param(i, iter); });
  opt_.zero_grad();
  Tape::get().clear();
  return stats;
}

TrainStats Trainer::step(const Tensor& images, const std::vector<GTSegmentation>& gts,
                         int64_t iter) {
  set_train_mode(true);
  Tape::get().clear();
  SegModel::ForwardResult fwd = model_.forward(images);
  PS_CHECK(fwd.mask_cls.count() > 0, "train: variant has no mask-classification output");
  Tensor loss = mask_class_loss(fwd.mask_cls, gts, weights_);
  TrainStats s = apply(loss, iter);
  set_train_mode(false);
  return s;
}

TrainStats Trainer::step_pixel(const Tensor& images, const std::vector<int64_t>& labels,
                               int64_t iter) {
  set_train_mode(true);
  Tape::get().clear();
  SegModel::ForwardResult fwd = model_.forward(images);
  PS_CHECK(fwd.pixel_logits.defined(), "train: variant has no per-pixel output");
  Tensor loss = pixel_ce_loss(fwd.pixel_logits, labels);
  TrainStats s = apply(loss, iter);
  set_train_mode(false);
  return s;
}

}  // namespace ps
