#pragma once

#include "ps/module.hpp"

namespace ps {

struct HierConfig {
  int64_t in_ch = 768;      // encoder width C
  int64_t width = 256;      // projected / decoder width
  int64_t deform_heads = 8;
  int64_t deform_points = 4;
  int64_t deform_ffn = 1024;
  void validate() const {
    PS_CHECK(in_ch % 4 == 0, "hier: encoder width must divide by 4 for the pyramid");
    PS_CHECK(width % deform_heads == 0, "hier: width % deform_heads != 0");
  }
};

// normalized (x, y) token centers for each level, replicated across levels:
// [1, S, L, 2], later expanded over batch
Tensor deform_reference_points(const std::vector<std::pair<int64_t, int64_t>>& level_shapes,
                               int64_t batch, DType dt);

struct FeaturePyramid {
  // relative scales vs F_vit: x2 up (stride p/2), identity (p), x2 down (2p),
  // plus the x4 up level (p/4) used only for the mask feature
  Tensor quarter;  // [B, C/4, 4h, 4w]
  Tensor eighth;   // [B, C/2, 2h, 2w]
  Tensor full;     // [B, C,   h,  w]
  Tensor pooled;   // [B, C,   h/2,w/2]
};

struct HierNeck {
  HierConfig cfg;
  ConvTranspose2x2 up1, up2;          // C->C/2, C/2->C/4
  Conv2d proj8, proj16, proj32;       // 1x1 -> width
  LayerNorm ln8, ln16, ln32;
  Conv2d proj4;                       // 1x1 C/4 -> width
  Linear value_proj, offset_proj, weight_proj, out_proj;
  Linear ffn1, ffn2;
  LayerNorm dnorm1, dnorm2;
  Tensor level_embed;  // [3, width]
  Conv2d fuse_conv;    // 3x3 width->width
  BatchNorm2d fuse_bn;

  HierNeck() = default;
  HierNeck(const HierConfig& cfg, Rng& rng);

  FeaturePyramid build_pyramid(const Tensor& f_vit) const;
  // the three decoder levels projected to width: {1/8, 1/16, 1/32} order
  std::vector<Tensor> project_levels(const FeaturePyramid& p) const;
  // single deformable transformer encoder layer over the three levels
  std::vector<Tensor> deformable_encoder_layer(const std::vector<Tensor>& levels) const;
  Tensor fuse_mask_features(const Tensor& quarter, const Tensor& enhanced_eighth);

  struct Output {
    std::vector<Tensor> decoder_sources;  // coarse-to-fine: 1/32, 1/16, 1/8
    Tensor f_mask;
  };
  Output forward(const Tensor& f_vit);
  void params(const std::string& prefix, ParamList& out) const;
};

}  // namespace ps
