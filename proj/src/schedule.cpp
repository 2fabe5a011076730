#include "ps/schedule.hpp"

#include <cmath>

namespace ps {

double LRSchedule::group_multiplier(int group) const {
  PS_CHECK(group >= 0 && group <= head_group(), "lr: bad group " << group);
  if (group == head_group()) return head_scale;
  int64_t layer = group;  // 0 = embedding
  int64_t expo;
  if (!literal_direction) {
    // deepest layer gets the base lr, shallower layers decay geometrically
    expo = layer == 0 ? depth : depth - layer;
  } else {
    expo = layer == 0 ? depth + 1 : layer;
  }
  return std::pow(layer_decay, static_cast<double>(expo));
}

double LRSchedule::lr_at(int64_t iter, int group) const {
  PS_CHECK(iter >= 0 && iter <= total_iters,
           "lr: iter " << iter << " outside schedule of " << total_iters);
  double warm = warmup_iters > 0 && iter < warmup_iters
                    ? static_cast<double>(iter) / static_cast<double>(warmup_iters)
                    : 1.0;
  double poly = std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(total_iters),
                         poly_power);
  return scheduled_lr(group) * warm * poly;
}

LRSchedule build_lr_schedule(double base_lr, double layer_decay, double head_scale,
                             int64_t depth) {
  PS_CHECK(base_lr > 0, "lr: base lr must be positive");
  PS_CHECK(layer_decay > 0 && layer_decay <= 1.0, "lr: decay r must be in (0,1]");
  PS_CHECK(head_scale > 1.0, "lr: head scale s must be greater than 1");
  PS_CHECK(depth >= 1, "lr: depth must be >= 1");
  LRSchedule s;
  s.base_lr = base_lr;
  s.layer_decay = layer_decay;
  s.head_scale = head_scale;
  s.depth = depth;
  return s;
}

int param_group_of(const std::string& name, int64_t depth) {
  if (name.rfind("encoder.", 0) != 0) return static_cast<int>(depth) + 1;
  std::string rest = name.substr(8);
  if (rest.rfind("patch_embed", 0) == 0 || rest.rfind("pos_embed", 0) == 0 ||
      rest.rfind("cls_token", 0) == 0)
    return 0;
  if (rest.rfind("blocks.", 0) == 0) {
    size_t dot = rest.find('.', 7);
    int64_t idx = std::stoll(rest.substr(7, dot - 7));
    PS_CHECK(idx >= 0 && idx < depth, "lr: block index out of range in " << name);
    return static_cast<int>(idx) + 1;
  }
  // encoder.norm (final LN) rides with the deepest layer
  return static_cast<int>(depth);
}

}  // namespace ps
