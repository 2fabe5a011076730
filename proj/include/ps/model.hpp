#pragma once

#include <optional>

#include "ps/hier.hpp"
#include "ps/mask_decoder.hpp"
#include "ps/refiner.hpp"
#include "ps/vit.hpp"

namespace ps {

enum class Variant { kLinear, kSimpleUpsample, kPlainSeg, kPlainSegHier };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct ModelConfig {
  Variant variant = Variant::kPlainSeg;
  ViTConfig vit;
  int64_t num_classes = 150;
  // mask-classification head
  int64_t decoder_width = 256;
  int64_t groups = 3;  // cross-attention groups (PlainSeg)
  int64_t num_queries = 100;
  int64_t decoder_layers = 6;
  int64_t decoder_heads = 8;
  int64_t ffn_dim = 2048;
  // hier
  int64_t deform_heads = 8;
  int64_t deform_points = 4;
  int64_t deform_ffn = 1024;
  uint64_t seed = 42;

  void validate() const;
  bool is_mask_cls() const {
    return variant == Variant::kPlainSeg || variant == Variant::kPlainSegHier;
  }
  // spatial stride of the (mask or pixel) logits relative to the input
  int64_t output_stride() const {
    switch (variant) {
      case Variant::kLinear: return vit.patch_size;
      default: return vit.patch_size / 4;
    }
  }
  int64_t num_sources() const { return variant == Variant::kPlainSegHier ? 3 : groups; }
};

// Table-scale presets (BEiT-B/L on 640 crops) and the desk-scale tiny configs.
ModelConfig plainseg_base_config();
ModelConfig plainseg_large_config();
ModelConfig plainseg_hier_base_config();
ModelConfig tiny_config(Variant v, int64_t num_classes);

struct SegModel {
  ModelConfig cfg;
  Rng rng;  // drop-path randomness during training
  ViTEncoder encoder;
  std::optional<LinearDecoder> linear_dec;
  std::optional<SimpleUpsampleDecoder> simple_dec;
  std::optional<Refiner> refiner;
  std::optional<MaskDecoder> decoder;
  std::optional<HierNeck> hier;

  explicit SegModel(const ModelConfig& cfg);

  struct ForwardResult {
    MaskClassOutput mask_cls;  // mask-classification variants
    Tensor pixel_logits;       // per-pixel variants: [B,K,h,w]
    // refiner taps for feature dumps
    Tensor pre_refine, post_refine;
    std::vector<Tensor> group_features;
  };
  ForwardResult forward(const Tensor& images, bool want_taps = false);

  ParamList params() const;
  int64_t num_parameters() const;
};

}  // namespace ps
