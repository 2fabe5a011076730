#pragma once

#include "ps/module.hpp"

namespace ps {

struct DecoderConfig {
  int64_t width = 256;
  int64_t num_layers = 6;
  int64_t num_queries = 100;
  int64_t num_heads = 8;
  int64_t ffn_dim = 2048;
  int64_t num_classes = 150;
  int64_t num_sources = 3;
  void validate() const {
    PS_CHECK(width % num_heads == 0, "decoder: width % num_heads != 0");
    PS_CHECK(num_sources >= 1 && num_layers % num_sources == 0,
             "decoder: num_layers " << num_layers << " must be a multiple of "
                                    << num_sources << " sources");
  }
};

// One class/mask prediction per decoder layer plus the pre-decoder one.
struct MaskClassOutput {
  std::vector<Tensor> class_logits;  // each [B, Nq, K+1]
  std::vector<Tensor> mask_logits;   // each [B, Nq, h, w] at mask resolution
  size_t count() const { return class_logits.size(); }
};

// round-robin source index for layer j
inline int64_t round_robin_source(int64_t layer, int64_t num_sources) {
  return layer % num_sources;
}

struct DecoderLayer {
  MultiheadAttention cross_attn, self_attn;
  Linear ffn1, ffn2;
  LayerNorm norm1, norm2, norm3;
  DecoderLayer() = default;
  DecoderLayer(const DecoderConfig& cfg, Rng& rng);
  // queries [B,Nq,D]; src [B,hw,D] (level embedding already added)
  Tensor forward(const Tensor& queries, const Tensor& query_pos, const Tensor& src,
                 const Tensor& attn_mask) const;
  void params(const std::string& prefix, ParamList& out) const;
};

struct MaskDecoder {
  DecoderConfig cfg;
  Tensor query_feat, query_pos;  // [Nq, D]
  Tensor level_embed;            // [num_sources, D]
  std::vector<DecoderLayer> layers;
  LayerNorm decoder_norm;
  Linear class_head;                       // D -> K+1
  Linear mask_mlp1, mask_mlp2, mask_mlp3;  // D -> D -> D -> D

  MaskDecoder() = default;
  MaskDecoder(const DecoderConfig& cfg, Rng& rng);

  // (class_logits [B,Nq,K+1], mask_logits [B,Nq,h,w])
  std::pair<Tensor, Tensor> predict(const Tensor& queries, const Tensor& f_mask) const;
  // additive attention mask at (h,w): keys with resized mask logit < 0 are
  // masked; all-masked rows reset to fully unmasked. Constant (detached).
  static Tensor attention_mask_from(const Tensor& mask_logits, int64_t h, int64_t w);

  // sources: list of [B, D, h_i, w_i]; layer j consumes source j % n
  MaskClassOutput run(const std::vector<Tensor>& sources, const Tensor& f_mask) const;
  void params(const std::string& prefix, ParamList& out) const;
};

}  // namespace ps
