#include "ps/hier.hpp"

#include <cmath>

namespace ps {

Tensor deform_reference_points(const std::vector<std::pair<int64_t, int64_t>>& level_shapes,
                               int64_t batch, DType dt) {
  int64_t S = 0;
  for (auto& [h, w] : level_shapes) S += h * w;
  int64_t L = static_cast<int64_t>(level_shapes.size());
  Tensor ref = Tensor::empty({batch, S, L, 2}, dt);
  int64_t tok = 0;
  for (auto& [h, w] : level_shapes) {
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double cx = (static_cast<double>(x) + 0.5) / static_cast<double>(w);
        double cy = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
        for (int64_t b = 0; b < batch; ++b)
          for (int64_t l = 0; l < L; ++l) {
            int64_t base = ((b * S + tok) * L + l) * 2;
            ref.impl()->value.set(base + 0, cx);
            ref.impl()->value.set(base + 1, cy);
          }
        ++tok;
      }
  }
  return ref;
}

HierNeck::HierNeck(const HierConfig& c, Rng& rng) : cfg(c) {
  cfg.validate();
  int64_t C = cfg.in_ch, W = cfg.width;
  up1 = ConvTranspose2x2(C, C / 2, rng);
  up2 = ConvTranspose2x2(C / 2, C / 4, rng);
  proj8 = Conv2d(C / 2, W, 1, 1, 0, 1, rng);
  proj16 = Conv2d(C, W, 1, 1, 0, 1, rng);
  proj32 = Conv2d(C, W, 1, 1, 0, 1, rng);
  ln8 = LayerNorm(W, 1);
  ln16 = LayerNorm(W, 1);
  ln32 = LayerNorm(W, 1);
  proj4 = Conv2d(C / 4, W, 1, 1, 0, 1, rng);
  value_proj = Linear(W, W, rng);
  out_proj = Linear(W, W, rng);
  int64_t H = cfg.deform_heads, P = cfg.deform_points, L = 3;
  offset_proj = Linear(W, H * L * P * 2, rng);
  weight_proj = Linear(W, H * L * P, rng);
  // deformable-attention reference init: zero offset weights with a radial
  // bias pattern scaled by point index; zero weight logits (uniform attention)
  {
    Tensor zw = Tensor::zeros({H * L * P * 2, W});
    offset_proj.weight.copy_from(zw.to_vector());
    std::vector<double> bias(static_cast<size_t>(H * L * P * 2), 0.0);
    for (int64_t h = 0; h < H; ++h) {
      double angle = 2.0 * M_PI * static_cast<double>(h) / static_cast<double>(H);
      double dx = std::cos(angle), dy = std::sin(angle);
      double mx = std::max(std::abs(dx), std::abs(dy));
      dx /= mx;
      dy /= mx;
      for (int64_t l = 0; l < L; ++l)
        for (int64_t p = 0; p < P; ++p) {
          int64_t base = ((h * L + l) * P + p) * 2;
          bias[static_cast<size_t>(base + 0)] = dx * static_cast<double>(p + 1);
          bias[static_cast<size_t>(base + 1)] = dy * static_cast<double>(p + 1);
        }
    }
    offset_proj.bias.copy_from(bias);
    weight_proj.weight.copy_from(std::vector<double>(static_cast<size_t>(H * L * P * W), 0.0));
    weight_proj.bias.copy_from(std::vector<double>(static_cast<size_t>(H * L * P), 0.0));
  }
  ffn1 = Linear(W, cfg.deform_ffn, rng);
  ffn2 = Linear(cfg.deform_ffn, W, rng);
  dnorm1 = LayerNorm(W, -1);
  dnorm2 = LayerNorm(W, -1);
  level_embed = init::normal({3, W}, rng, 0.02).set_requires_grad(true);
  fuse_conv = Conv2d(W, W, 3, 1, 1, 1, rng);
  fuse_bn = BatchNorm2d(W);
}

FeaturePyramid HierNeck::build_pyramid(const Tensor& f_vit) const {
  PS_CHECK(f_vit.dim(2) % 2 == 0 && f_vit.dim(3) % 2 == 0,
           "hier: F_vit spatial dims must be even for pooling");
  FeaturePyramid p;
  p.full = f_vit;
  p.eighth = up1.forward(f_vit);
  p.quarter = up2.forward(p.eighth);
  p.pooled = max_pool2d(f_vit);
  return p;
}

std::vector<Tensor> HierNeck::project_levels(const FeaturePyramid& p) const {
  std::vector<Tensor> out;
  out.push_back(ln8.forward(proj8.forward(p.eighth)));
  out.push_back(ln16.forward(proj16.forward(p.full)));
  out.push_back(ln32.forward(proj32.forward(p.pooled)));
  return out;
}

std::vector<Tensor> HierNeck::deformable_encoder_layer(const std::vector<Tensor>& levels) const {
  PS_CHECK(levels.size() == 3, "hier: deformable layer expects 3 levels");
  int64_t B = levels[0].dim(0), W = cfg.width;
  std::vector<std::pair<int64_t, int64_t>> shapes;
  std::vector<Tensor> flat, flat_pos;
  for (size_t i = 0; i < levels.size(); ++i) {
    const Tensor& lv = levels[i];
    shapes.emplace_back(lv.dim(2), lv.dim(3));
    Tensor f = permute(reshape(lv, {B, W, -1}), {0, 2, 1});
    Tensor emb = reshape(slice(level_embed, 0, static_cast<int64_t>(i), 1), {W});
    flat.push_back(f);
    flat_pos.push_back(add(f, emb));
  }
  Tensor tok = concat(flat, 1);       // [B,S,W] value path
  Tensor q = concat(flat_pos, 1);     // [B,S,W] query path (level embedding added)
  int64_t S = tok.dim(1);
  int64_t H = cfg.deform_heads, P = cfg.deform_points, L = 3;

  Tensor offsets = reshape(offset_proj.forward(q), {B, S, H, L, P, 2});
  // learned offsets are in pixels of each level; normalize per level
  Tensor norm = Tensor::empty({1, 1, 1, L, 1, 2}, tok.dtype());
  for (int64_t l = 0; l < L; ++l) {
    norm.impl()->value.set(l * 2 + 0, 1.0 / static_cast<double>(shapes[static_cast<size_t>(l)].second));
    norm.impl()->value.set(l * 2 + 1, 1.0 / static_cast<double>(shapes[static_cast<size_t>(l)].first));
  }
  offsets = mul(offsets, norm);
  Tensor weights = softmax(reshape(weight_proj.forward(q), {B, S, H, L * P}));
  weights = reshape(weights, {B, S, H, L, P});
  Tensor ref = deform_reference_points(shapes, B, tok.dtype());
  Tensor value = value_proj.forward(tok);
  Tensor sampled = ms_deform_sample(value, shapes, ref, offsets, weights);
  Tensor t = dnorm1.forward(add(tok, out_proj.forward(sampled)));
  t = dnorm2.forward(add(t, ffn2.forward(relu(ffn1.forward(t)))));

  std::vector<Tensor> out;
  int64_t off = 0;
  for (size_t i = 0; i < shapes.size(); ++i) {
    int64_t hw = shapes[i].first * shapes[i].second;
    Tensor piece = slice(t, 1, off, hw);
    out.push_back(reshape(permute(piece, {0, 2, 1}), {B, W, shapes[i].first, shapes[i].second}));
    off += hw;
  }
  return out;
}

Tensor HierNeck::fuse_mask_features(const Tensor& quarter, const Tensor& enhanced_eighth) {
  Tensor m = proj4.forward(quarter);
  Tensor u = bilinear_upsample(enhanced_eighth, 2);
  PS_CHECK(m.dim(2) == u.dim(2) && m.dim(3) == u.dim(3), "hier: fusion spatial mismatch");
  Tensor x = fuse_conv.forward(add(m, u));
  return relu(fuse_bn.forward(x));
}

HierNeck::Output HierNeck::forward(const Tensor& f_vit) {
  FeaturePyramid p = build_pyramid(f_vit);
  std::vector<Tensor> enhanced = deformable_encoder_layer(project_levels(p));
  Output out;
  out.f_mask = fuse_mask_features(p.quarter, enhanced[0]);
  // decoder consumes coarse-to-fine within each round
  out.decoder_sources = {enhanced[2], enhanced[1], enhanced[0]};
  return out;
}

void HierNeck::params(const std::string& prefix, ParamList& out) const {
  up1.params(prefix + ".up1", out);
  up2.params(prefix + ".up2", out);
  proj8.params(prefix + ".proj8", out);
  ln8.params(prefix + ".ln8", out);
  proj16.params(prefix + ".proj16", out);
  ln16.params(prefix + ".ln16", out);
  proj32.params(prefix + ".proj32", out);
  ln32.params(prefix + ".ln32", out);
  proj4.params(prefix + ".proj4", out);
  value_proj.params(prefix + ".deform.value_proj", out);
  offset_proj.params(prefix + ".deform.offset_proj", out);
  weight_proj.params(prefix + ".deform.weight_proj", out);
  out_proj.params(prefix + ".deform.out_proj", out);
  dnorm1.params(prefix + ".deform.norm1", out);
  ffn1.params(prefix + ".deform.ffn1", out);
  ffn2.params(prefix + ".deform.ffn2", out);
  dnorm2.params(prefix + ".deform.norm2", out);
  out.push_back({prefix + ".deform.level_embed", level_embed, true, true});
  fuse_conv.params(prefix + ".fuse.conv", out);
  fuse_bn.params(prefix + ".fuse.bn", out);
}

}  // namespace ps
