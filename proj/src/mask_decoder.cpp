#include "ps/mask_decoder.hpp"

namespace ps {

DecoderLayer::DecoderLayer(const DecoderConfig& cfg, Rng& rng)
    : cross_attn(cfg.width, cfg.num_heads, rng),
      self_attn(cfg.width, cfg.num_heads, rng),
      ffn1(cfg.width, cfg.ffn_dim, rng),
      ffn2(cfg.ffn_dim, cfg.width, rng),
      norm1(cfg.width, -1),
      norm2(cfg.width, -1),
      norm3(cfg.width, -1) {}

Tensor DecoderLayer::forward(const Tensor& queries, const Tensor& query_pos,
                             const Tensor& src, const Tensor& attn_mask) const {
  // masked cross-attention -> self-attention -> FFN; pre-norm residuals so
  // zero-weight sublayers leave the queries untouched
  Tensor n = norm1.forward(queries);
  Tensor t = add(queries, cross_attn.forward(add(n, query_pos), src, src, attn_mask));
  n = norm2.forward(t);
  Tensor q2 = add(n, query_pos);
  t = add(t, self_attn.forward(q2, q2, n));
  n = norm3.forward(t);
  return add(t, ffn2.forward(relu(ffn1.forward(n))));
}

void DecoderLayer::params(const std::string& prefix, ParamList& out) const {
  cross_attn.params(prefix + ".cross_attn", out);
  norm1.params(prefix + ".norm1", out);
  self_attn.params(prefix + ".self_attn", out);
  norm2.params(prefix + ".norm2", out);
  ffn1.params(prefix + ".ffn1", out);
  ffn2.params(prefix + ".ffn2", out);
  norm3.params(prefix + ".norm3", out);
}

MaskDecoder::MaskDecoder(const DecoderConfig& c, Rng& rng) : cfg(c) {
  cfg.validate();
  query_feat = init::normal({cfg.num_queries, cfg.width}, rng, 0.02).set_requires_grad(true);
  query_pos = init::normal({cfg.num_queries, cfg.width}, rng, 0.02).set_requires_grad(true);
  level_embed = init::normal({cfg.num_sources, cfg.width}, rng, 0.02).set_requires_grad(true);
  layers.reserve(static_cast<size_t>(cfg.num_layers));
  for (int64_t i = 0; i < cfg.num_layers; ++i) layers.emplace_back(cfg, rng);
  decoder_norm = LayerNorm(cfg.width, -1);
  class_head = Linear(cfg.width, cfg.num_classes + 1, rng);
  mask_mlp1 = Linear(cfg.width, cfg.width, rng);
  mask_mlp2 = Linear(cfg.width, cfg.width, rng);
  mask_mlp3 = Linear(cfg.width, cfg.width, rng);
}

std::pair<Tensor, Tensor> MaskDecoder::predict(const Tensor& queries,
                                               const Tensor& f_mask) const {
  Tensor q = decoder_norm.forward(queries);
  Tensor cls = class_head.forward(q);
  Tensor e = mask_mlp3.forward(relu(mask_mlp2.forward(relu(mask_mlp1.forward(q)))));
  int64_t B = f_mask.dim(0), D = f_mask.dim(1), h = f_mask.dim(2), w = f_mask.dim(3);
  Tensor flat = reshape(f_mask, {B, D, h * w});
  Tensor m = bmm(e, flat);  // [B,Nq,hw] = <e_q, F_mask[x]>
  return {cls, reshape(m, {B, e.dim(1), h, w})};
}

Tensor MaskDecoder::attention_mask_from(const Tensor& mask_logits, int64_t h, int64_t w) {
  NoGradGuard ng;
  Tensor resized = bilinear_resize(mask_logits.detach(), h, w);
  int64_t B = resized.dim(0), Nq = resized.dim(1), hw = h * w;
  Tensor out = Tensor::empty({B, Nq, hw}, resized.dtype());
  for (int64_t b = 0; b < B; ++b)
    for (int64_t q = 0; q < Nq; ++q) {
      bool any_keep = false;
      int64_t base = (b * Nq + q) * hw;
      for (int64_t i = 0; i < hw; ++i) {
        // sigmoid(x) < 0.5 <=> x < 0; logit exactly 0 stays unmasked
        bool keep = resized.impl()->value.get(base + i) >= 0.0;
        any_keep = any_keep || keep;
        out.impl()->value.set(base + i, keep ? 0.0 : kMaskedValue);
      }
      if (!any_keep)
        for (int64_t i = 0; i < hw; ++i) out.impl()->value.set(base + i, 0.0);
      if (debug_checks()) {
        bool has_key = false;
        for (int64_t i = 0; i < hw; ++i)
          has_key = has_key || out.impl()->value.get(base + i) == 0.0;
        PS_CHECK(has_key, "attention mask row lost every key despite the safeguard");
      }
    }
  return out;
}

MaskClassOutput MaskDecoder::run(const std::vector<Tensor>& sources,
                                 const Tensor& f_mask) const {
  PS_CHECK(static_cast<int64_t>(sources.size()) == cfg.num_sources,
           "decoder: expected " << cfg.num_sources << " sources, got " << sources.size());
  int64_t B = f_mask.dim(0);
  std::vector<Tensor> flat;
  std::vector<std::pair<int64_t, int64_t>> dims;
  for (size_t i = 0; i < sources.size(); ++i) {
    const Tensor& s = sources[i];
    PS_CHECK(s.dim(1) == cfg.width, "decoder: source width mismatch");
    dims.emplace_back(s.dim(2), s.dim(3));
    Tensor f = permute(reshape(s, {B, cfg.width, -1}), {0, 2, 1});  // [B,hw,D]
    Tensor emb = reshape(slice(level_embed, 0, static_cast<int64_t>(i), 1), {cfg.width});
    flat.push_back(add(f, emb));
  }

  Tensor queries = expand_batch(query_feat, B);
  Tensor qpos = expand_batch(query_pos, B);

  MaskClassOutput out;
  auto [cls0, mask0] = predict(queries, f_mask);
  out.class_logits.push_back(cls0);
  out.mask_logits.push_back(mask0);

  Tensor prev_mask = mask0;
  for (int64_t j = 0; j < cfg.num_layers; ++j) {
    int64_t s = round_robin_source(j, cfg.num_sources);
    Tensor attn_mask = attention_mask_from(prev_mask, dims[static_cast<size_t>(s)].first,
                                           dims[static_cast<size_t>(s)].second);
    queries = layers[static_cast<size_t>(j)].forward(queries, qpos,
                                                     flat[static_cast<size_t>(s)], attn_mask);
    auto [cls, msk] = predict(queries, f_mask);
    out.class_logits.push_back(cls);
    out.mask_logits.push_back(msk);
    prev_mask = msk;
  }
  return out;
}

void MaskDecoder::params(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".query_feat", query_feat, true, true});
  out.push_back({prefix + ".query_pos", query_pos, true, true});
  out.push_back({prefix + ".level_embed", level_embed, true, true});
  for (size_t i = 0; i < layers.size(); ++i)
    layers[i].params(prefix + ".layers." + std::to_string(i), out);
  decoder_norm.params(prefix + ".norm", out);
  class_head.params(prefix + ".class_head", out);
  mask_mlp1.params(prefix + ".mask_mlp.0", out);
  mask_mlp2.params(prefix + ".mask_mlp.1", out);
  mask_mlp3.params(prefix + ".mask_mlp.2", out);
}

}  // namespace ps
