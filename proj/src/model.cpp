#include "ps/model.hpp"

namespace ps {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kLinear: return "linear";
    case Variant::kSimpleUpsample: return "simple-upsample";
    case Variant::kPlainSeg: return "plainseg";
    case Variant::kPlainSegHier: return "plainseg-hier";
  }
  return "?";
}

Variant variant_from_name(const std::string& name) {
  if (name == "linear") return Variant::kLinear;
  if (name == "simple-upsample") return Variant::kSimpleUpsample;
  if (name == "plainseg") return Variant::kPlainSeg;
  if (name == "plainseg-hier") return Variant::kPlainSegHier;
  fail("unknown model variant '" + name + "'");
}

void ModelConfig::validate() const {
  vit.validate();
  PS_CHECK(num_classes >= 1, "model: num_classes must be >= 1");
  if (variant == Variant::kPlainSeg) {
    PS_CHECK(vit.embed_dim % groups == 0, "model: embed_dim not divisible by groups");
    PS_CHECK(decoder_layers % groups == 0,
             "model: decoder_layers must be a round-robin multiple of groups");
  }
  if (variant == Variant::kPlainSegHier) {
    PS_CHECK(decoder_layers % 3 == 0, "model: hier decoder_layers must be a multiple of 3");
    PS_CHECK(vit.patch_size % 4 == 0 || vit.patch_size == 8,
             "model: hier needs patch size divisible for the pyramid");
  }
  if (is_mask_cls())
    PS_CHECK(decoder_width % decoder_heads == 0, "model: decoder width % heads != 0");
}

ModelConfig plainseg_base_config() {
  ModelConfig c;
  c.variant = Variant::kPlainSeg;
  c.vit = {640, 16, 768, 12, 12, 4.0, PosEmbedKind::kRelative2dBias, 0.1};
  c.num_classes = 150;
  c.groups = 3;
  c.decoder_layers = 6;
  return c;
}

ModelConfig plainseg_large_config() {
  ModelConfig c;
  c.variant = Variant::kPlainSeg;
  c.vit = {640, 16, 1024, 24, 16, 4.0, PosEmbedKind::kRelative2dBias, 0.3};
  c.num_classes = 150;
  c.groups = 4;
  c.decoder_layers = 8;
  return c;
}

ModelConfig plainseg_hier_base_config() {
  ModelConfig c = plainseg_base_config();
  c.variant = Variant::kPlainSegHier;
  c.decoder_layers = 9;
  return c;
}

ModelConfig tiny_config(Variant v, int64_t num_classes) {
  ModelConfig c;
  c.variant = v;
  c.vit = {64, 8, 64, 4, 4, 4.0, PosEmbedKind::kAbsolute1d, 0.0};
  c.num_classes = num_classes;
  c.decoder_width = 32;
  c.groups = 2;
  c.num_queries = 20;
  c.decoder_layers = v == Variant::kPlainSegHier ? 6 : 4;
  c.decoder_heads = 4;
  c.ffn_dim = 256;
  c.deform_heads = 4;
  c.deform_points = 4;
  c.deform_ffn = 128;
  return c;
}

SegModel::SegModel(const ModelConfig& c) : cfg(c), rng(c.seed) {
  cfg.validate();
  encoder = ViTEncoder(cfg.vit, rng);
  switch (cfg.variant) {
    case Variant::kLinear:
      linear_dec = LinearDecoder(cfg.vit.embed_dim, cfg.num_classes, rng);
      break;
    case Variant::kSimpleUpsample:
      simple_dec = SimpleUpsampleDecoder(cfg.vit.embed_dim, cfg.num_classes, rng);
      break;
    case Variant::kPlainSeg: {
      refiner = Refiner({cfg.vit.embed_dim, cfg.groups, cfg.decoder_width}, rng);
      DecoderConfig dc{cfg.decoder_width, cfg.decoder_layers, cfg.num_queries,
                       cfg.decoder_heads, cfg.ffn_dim,        cfg.num_classes,
                       cfg.groups};
      decoder = MaskDecoder(dc, rng);
      break;
    }
    case Variant::kPlainSegHier: {
      hier = HierNeck({cfg.vit.embed_dim, cfg.decoder_width, cfg.deform_heads,
                       cfg.deform_points, cfg.deform_ffn},
                      rng);
      DecoderConfig dc{cfg.decoder_width, cfg.decoder_layers, cfg.num_queries,
                       cfg.decoder_heads, cfg.ffn_dim,        cfg.num_classes,
                       3};
      decoder = MaskDecoder(dc, rng);
      break;
    }
  }
}

SegModel::ForwardResult SegModel::forward(const Tensor& images, bool want_taps) {
  ForwardResult r;
  Tensor f_vit = encoder.encode(images, rng);
  switch (cfg.variant) {
    case Variant::kLinear:
      r.pixel_logits = linear_dec->forward(f_vit);
      break;
    case Variant::kSimpleUpsample:
      r.pixel_logits = simple_dec->forward(f_vit);
      break;
    case Variant::kPlainSeg: {
      if (want_taps) r.pre_refine = bilinear_upsample(f_vit, 2);
      Tensor f_refine = refiner->refine(f_vit);
      if (want_taps) r.post_refine = f_refine;
      std::vector<Tensor> groups = refiner->width_to_depth(f_refine);
      if (want_taps) r.group_features = groups;
      Tensor f_mask = refiner->mask_feature(f_refine);
      r.mask_cls = decoder->run(groups, f_mask);
      break;
    }
    case Variant::kPlainSegHier: {
      HierNeck::Output neck = hier->forward(f_vit);
      r.mask_cls = decoder->run(neck.decoder_sources, neck.f_mask);
      break;
    }
  }
  return r;
}

ParamList SegModel::params() const {
  ParamList out;
  encoder.params("encoder", out);
  if (linear_dec) linear_dec->params("decoder", out);
  if (simple_dec) simple_dec->params("decoder", out);
  if (refiner) refiner->params("refiner", out);
  if (hier) hier->params("hier", out);
  if (decoder) decoder->params("decoder", out);
  return out;
}

int64_t SegModel::num_parameters() const {
  int64_t n = 0;
  for (const NamedParam& p : params())
    if (p.trainable) n += p.tensor.numel();
  return n;
}

}  // namespace ps
