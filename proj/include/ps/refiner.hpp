#pragma once

#include "ps/module.hpp"

namespace ps {

// 1x1 projection of the last feature map to class logits.
struct LinearDecoder {
  Conv2d proj;
  LinearDecoder() = default;
  LinearDecoder(int64_t in_ch, int64_t num_classes, Rng& rng);
  Tensor forward(const Tensor& f_vit) const { return proj.forward(f_vit); }
  void params(const std::string& prefix, ParamList& out) const;
};

// Up x2 -> Conv3x3+BN+ReLU -> Up x2 -> Conv3x3+BN+ReLU -> Conv1x1.
struct SimpleUpsampleDecoder {
  Conv2d conv1, conv2, head;
  BatchNorm2d bn1, bn2;
  SimpleUpsampleDecoder() = default;
  SimpleUpsampleDecoder(int64_t in_ch, int64_t num_classes, Rng& rng);
  Tensor forward(const Tensor& f_vit);
  void params(const std::string& prefix, ParamList& out) const;
};

struct RefinerConfig {
  int64_t in_ch = 768;
  int64_t groups = 3;       // 3 base / 4 large
  int64_t width = 256;      // per-group channels = decoder width
  void validate() const {
    PS_CHECK(groups >= 1 && in_ch % groups == 0,
             "refiner: in_ch " << in_ch << " not divisible by " << groups << " groups");
  }
};

// Restores resolution from the last ViT feature and produces the grouped
// cross-attention features plus the mask feature.
struct Refiner {
  RefinerConfig cfg;
  LayerNorm norm_pre, norm_post, norm_group;
  Conv2d conv_refine;  // 3x3 C->C
  Conv2d conv_group;   // 3x3 C->groups*width, grouped
  Conv2d conv_mask1;   // 3x3 C->width
  BatchNorm2d bn_mask;
  Conv2d conv_mask2;   // 1x1 width->width

  Refiner() = default;
  Refiner(const RefinerConfig& cfg, Rng& rng);

  // F_vit [B,C,h,w] -> F_refine [B,C,2h,2w]
  Tensor refine(const Tensor& f_vit) const;
  // F_refine -> n tensors [B,width,2h,2w]
  std::vector<Tensor> width_to_depth(const Tensor& f_refine) const;
  // F_refine -> F_mask [B,width,4h,4w]
  Tensor mask_feature(const Tensor& f_refine);

  void params(const std::string& prefix, ParamList& out) const;
};

}  // namespace ps
