#pragma once

#include <string>

#include "ps/common.hpp"

namespace ps {

// Parameter groups: 0 = patch/position embedding, 1..depth = encoder layers
// bottom-up, depth+1 = randomly initialized head.
struct LRSchedule {
  double base_lr = 3e-5;
  double layer_decay = 0.9;   // r
  double head_scale = 10.0;   // s > 1
  int64_t depth = 12;
  int64_t warmup_iters = 1500;
  int64_t total_iters = 80000;
  double poly_power = 1.0;
  // paper formula "l * r^i" applied literally (deep layers get the smaller
  // lr); off by default, which follows the stated intent instead
  bool literal_direction = false;

  int num_groups() const { return static_cast<int>(depth) + 2; }
  int head_group() const { return static_cast<int>(depth) + 1; }
  double group_multiplier(int group) const;
  // scheduled (peak) lr of a group before warmup / decay shaping
  double scheduled_lr(int group) const { return base_lr * group_multiplier(group); }
  // lr at an iteration: linear warmup times polynomial decay to zero
  double lr_at(int64_t iter, int group) const;
};

LRSchedule build_lr_schedule(double base_lr, double layer_decay, double head_scale,
                             int64_t depth);

// Maps a parameter name to its group: encoder.patch_embed / pos_embed /
// cls_token -> 0, encoder.blocks.<i>.* -> i+1, everything else -> head.
int param_group_of(const std::string& name, int64_t depth);

}  // namespace ps
