#pragma once

#include "ps/module.hpp"

namespace ps {

enum class PosEmbedKind { kAbsolute1d, kRelative2dBias };

struct ViTConfig {
  int64_t img_size = 224;
  int64_t patch_size = 16;
  int64_t embed_dim = 768;
  int64_t depth = 12;
  int64_t num_heads = 12;
  double mlp_ratio = 4.0;
  PosEmbedKind pos_embed = PosEmbedKind::kRelative2dBias;
  double drop_path_rate = 0.0;

  int64_t grid() const { return img_size / patch_size; }
  int64_t tokens() const { return grid() * grid(); }
  void validate() const {
    PS_CHECK(img_size % patch_size == 0, "vit: img_size % patch_size != 0");
    PS_CHECK(embed_dim % num_heads == 0, "vit: embed_dim % num_heads != 0");
  }
};

// Flat index into the relative-bias table for a (from, to) token pair on an
// h x w grid: (drow + h - 1) * (2w - 1) + (dcol + w - 1).
int64_t relpos_table_index(int64_t h, int64_t w, int64_t from_r, int64_t from_c,
                           int64_t to_r, int64_t to_c);
// Full (N+1)^2 index map including the 3 class-token slots at the table end.
std::vector<int64_t> relpos_index_map(int64_t h, int64_t w);

struct ViTBlock {
  LayerNorm norm1, norm2;
  MultiheadAttention attn;
  Linear mlp_fc1, mlp_fc2;
  Tensor rel_bias_table;  // [(2g-1)^2+3, heads] when relative; else undefined
  double drop_prob = 0.0;

  ViTBlock() = default;
  ViTBlock(const ViTConfig& cfg, double drop_prob, Rng& rng);
  // tokens [B, N+1, C]; rel_index shared across layers
  Tensor forward(const Tensor& x, const std::vector<int64_t>& rel_index, Rng& rng) const;
  void params(const std::string& prefix, ParamList& out) const;
};

struct ViTEncoder {
  ViTConfig cfg;
  Conv2d patch_proj;
  Tensor cls_token;  // [1, C]
  Tensor pos_table;  // [N+1, C] for absolute-1d; undefined otherwise
  std::vector<ViTBlock> blocks;
  LayerNorm final_norm;
  std::vector<int64_t> rel_index;

  ViTEncoder() = default;
  ViTEncoder(const ViTConfig& cfg, Rng& rng);

  // image [B,3,H,W] -> tokens [B, N, C] (no class token, no position yet)
  Tensor patch_embed(const Tensor& image) const;
  // F_vit [B, C, H/p, W/p]
  Tensor encode(const Tensor& image, Rng& rng) const;
  void params(const std::string& prefix, ParamList& out) const;
};

}  // namespace ps
