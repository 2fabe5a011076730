#include "ps/costing.hpp"

#include <sstream>

namespace ps {

namespace {

int64_t linear_params(int64_t in, int64_t out, bool bias = true) {
  return in * out + (bias ? out : 0);
}

int64_t conv_params(int64_t cin, int64_t cout, int64_t k, int64_t groups = 1,
                    bool bias = true) {
  return cout * (cin / groups) * k * k + (bias ? cout : 0);
}

int64_t ln_params(int64_t c) { return 2 * c; }
int64_t bn_params(int64_t c) { return 2 * c; }  // trainable affine only

double conv_macs(int64_t cin, int64_t cout, int64_t k, int64_t oh, int64_t ow,
                 int64_t groups = 1) {
  return static_cast<double>(oh * ow) * static_cast<double>(cout) *
         static_cast<double>((cin / groups) * k * k);
}

double linear_macs(int64_t rows, int64_t in, int64_t out) {
  return static_cast<double>(rows) * static_cast<double>(in) * static_cast<double>(out);
}

int64_t mask_decoder_params(const ModelConfig& cfg, int64_t sources) {
  int64_t w = cfg.decoder_width, f = cfg.ffn_dim;
  int64_t per_layer = 2 * 4 * linear_params(w, w)        // cross + self attention
                      + linear_params(w, f) + linear_params(f, w)  // FFN
                      + 3 * ln_params(w);
  int64_t n = cfg.decoder_layers * per_layer;
  n += 2 * cfg.num_queries * w;        // query features + positions
  n += sources * w;                    // level embeddings
  n += ln_params(w);                   // decoder norm
  n += linear_params(w, cfg.num_classes + 1);  // class head
  n += 3 * linear_params(w, w);        // mask embedding MLP
  return n;
}

double mask_decoder_macs(const ModelConfig& cfg,
                         const std::vector<std::pair<int64_t, int64_t>>& source_dims,
                         int64_t mask_h, int64_t mask_w) {
  int64_t w = cfg.decoder_width, f = cfg.ffn_dim, nq = cfg.num_queries;
  int64_t sources = static_cast<int64_t>(source_dims.size());
  double macs = 0.0;
  for (int64_t j = 0; j < cfg.decoder_layers; ++j) {
    auto [sh, sw] = source_dims[static_cast<size_t>(j % sources)];
    int64_t hw = sh * sw;
    // cross attention: q/out over queries, k/v over keys, two score matmuls
    macs += linear_macs(nq, w, w) * 2 + linear_macs(hw, w, w) * 2;
    macs += 2.0 * static_cast<double>(nq) * static_cast<double>(hw) * static_cast<double>(w);
    // self attention
    macs += linear_macs(nq, w, w) * 4;
    macs += 2.0 * static_cast<double>(nq) * static_cast<double>(nq) * static_cast<double>(w);
    // FFN
    macs += linear_macs(nq, w, f) + linear_macs(nq, f, w);
  }
  // per-prediction heads (layers + 1 predictions)
  double per_pred = linear_macs(nq, w, cfg.num_classes + 1) + 3 * linear_macs(nq, w, w) +
                    static_cast<double>(nq) * static_cast<double>(w) *
                        static_cast<double>(mask_h * mask_w);
  macs += per_pred * static_cast<double>(cfg.decoder_layers + 1);
  return macs;
}

}  // namespace

int64_t count_encoder_params(const ViTConfig& cfg) {
  int64_t c = cfg.embed_dim;
  int64_t m = static_cast<int64_t>(static_cast<double>(c) * cfg.mlp_ratio);
  int64_t g = cfg.grid();
  int64_t n = conv_params(3, c, cfg.patch_size);  // patch embedding
  n += c;                                         // class token
  if (cfg.pos_embed == PosEmbedKind::kAbsolute1d) n += (cfg.tokens() + 1) * c;
  int64_t per_block = 4 * linear_params(c, c)       // q,k,v,out
                      + 2 * ln_params(c)            // norm1, norm2
                      + linear_params(c, m) + linear_params(m, c);
  if (cfg.pos_embed == PosEmbedKind::kRelative2dBias)
    per_block += ((2 * g - 1) * (2 * g - 1) + 3) * cfg.num_heads;
  n += cfg.depth * per_block;
  n += ln_params(c);  // final norm
  return n;
}

int64_t count_head_params(const ModelConfig& cfg) {
  int64_t c = cfg.vit.embed_dim, w = cfg.decoder_width, k = cfg.num_classes;
  switch (cfg.variant) {
    case Variant::kLinear:
      return conv_params(c, k, 1);
    case Variant::kSimpleUpsample:
      return 2 * (conv_params(c, c, 3) + bn_params(c)) + conv_params(c, k, 1);
    case Variant::kPlainSeg: {
      int64_t n = 2 * ln_params(c) + conv_params(c, c, 3);                  // refine
      n += conv_params(c, cfg.groups * w, 3, cfg.groups) + ln_params(cfg.groups * w);
      n += conv_params(c, w, 3) + bn_params(w) + conv_params(w, w, 1);      // mask path
      n += mask_decoder_params(cfg, cfg.groups);
      return n;
    }
    case Variant::kPlainSegHier: {
      int64_t n = 0;
      n += c * (c / 2) * 4 + c / 2;        // deconv C -> C/2
      n += (c / 2) * (c / 4) * 4 + c / 4;  // deconv C/2 -> C/4
      n += conv_params(c / 2, w, 1) + conv_params(c, w, 1) + conv_params(c, w, 1) +
           3 * ln_params(w);
      n += conv_params(c / 4, w, 1);       // 1/4 projection for fusion
      int64_t hp = cfg.deform_heads * 3 * cfg.deform_points;
      n += 2 * linear_params(w, w);        // value + output projections
      n += linear_params(w, hp * 2) + linear_params(w, hp);
      n += linear_params(w, cfg.deform_ffn) + linear_params(cfg.deform_ffn, w);
      n += 2 * ln_params(w);
      n += 3 * w;                          // deformable level embeddings
      n += conv_params(w, w, 3) + bn_params(w);  // fusion
      n += mask_decoder_params(cfg, 3);
      return n;
    }
  }
  return 0;
}

double encoder_gmacs(const ViTConfig& cfg, int64_t in_h, int64_t in_w) {
  int64_t gh = in_h / cfg.patch_size, gw = in_w / cfg.patch_size;
  int64_t tokens = gh * gw + 1;  // class token included
  int64_t c = cfg.embed_dim;
  int64_t m = static_cast<int64_t>(static_cast<double>(c) * cfg.mlp_ratio);
  double macs = conv_macs(3, c, cfg.patch_size, gh, gw);
  double per_block = linear_macs(tokens, c, c) * 4                         // q,k,v,out
                     + 2.0 * static_cast<double>(tokens) * tokens * c      // scores + weighted sum
                     + linear_macs(tokens, c, m) + linear_macs(tokens, m, c);
  macs += static_cast<double>(cfg.depth) * per_block;
  return macs / 1e9;
}

double simple_upsample_decoder_gmacs(int64_t embed_dim, int64_t num_classes, int64_t in_h,
                                     int64_t in_w, int64_t patch) {
  int64_t h = in_h / patch, w = in_w / patch;
  double macs = conv_macs(embed_dim, embed_dim, 3, 2 * h, 2 * w);
  macs += conv_macs(embed_dim, embed_dim, 3, 4 * h, 4 * w);
  macs += conv_macs(embed_dim, num_classes, 1, 4 * h, 4 * w);
  return macs / 1e9;
}

double head_gmacs(const ModelConfig& cfg, int64_t in_h, int64_t in_w) {
  int64_t p = cfg.vit.patch_size;
  int64_t h = in_h / p, w = in_w / p;  // F_vit dims
  int64_t c = cfg.vit.embed_dim, dw = cfg.decoder_width, k = cfg.num_classes;
  switch (cfg.variant) {
    case Variant::kLinear:
      return conv_macs(c, k, 1, h, w) / 1e9;
    case Variant::kSimpleUpsample:
      return simple_upsample_decoder_gmacs(c, k, in_h, in_w, p);
    case Variant::kPlainSeg: {
      double macs = conv_macs(c, c, 3, 2 * h, 2 * w);                       // refine
      macs += conv_macs(c, cfg.groups * dw, 3, 2 * h, 2 * w, cfg.groups);   // width-to-depth
      macs += conv_macs(c, dw, 3, 4 * h, 4 * w) + conv_macs(dw, dw, 1, 4 * h, 4 * w);
      std::vector<std::pair<int64_t, int64_t>> dims(static_cast<size_t>(cfg.groups),
                                                    {2 * h, 2 * w});
      macs += mask_decoder_macs(cfg, dims, 4 * h, 4 * w);
      return macs / 1e9;
    }
    case Variant::kPlainSegHier: {
      double macs = 4.0 * static_cast<double>(h * w) * c * (c / 2);         // deconv 1 taps
      macs += 4.0 * static_cast<double>(4 * h * w) * (c / 2) * (c / 4);     // deconv 2
      macs += conv_macs(c / 2, dw, 1, 2 * h, 2 * w) + conv_macs(c, dw, 1, h, w) +
              conv_macs(c, dw, 1, h / 2, w / 2);
      macs += conv_macs(c / 4, dw, 1, 4 * h, 4 * w);
      int64_t S = (2 * h) * (2 * w) + h * w + (h / 2) * (w / 2);
      int64_t hp = cfg.deform_heads * 3 * cfg.deform_points;
      macs += linear_macs(S, dw, dw) * 2;                 // value + output proj
      macs += linear_macs(S, dw, hp * 2) + linear_macs(S, dw, hp);
      macs += linear_macs(S, dw, cfg.deform_ffn) + linear_macs(S, cfg.deform_ffn, dw);
      macs += conv_macs(dw, dw, 3, 4 * h, 4 * w);         // fusion
      std::vector<std::pair<int64_t, int64_t>> dims = {
          {h / 2, w / 2}, {h, w}, {2 * h, 2 * w}};        // coarse-to-fine
      macs += mask_decoder_macs(cfg, dims, 4 * h, 4 * w);
      return macs / 1e9;
    }
  }
  return 0.0;
}

CostReport analyze_cost(const ModelConfig& cfg, int64_t in_h, int64_t in_w) {
  CostReport r;
  r.input_h = in_h;
  r.input_w = in_w;
  r.pretrained_params = count_encoder_params(cfg.vit);
  r.random_params = count_head_params(cfg);
  r.total_params = r.pretrained_params + r.random_params;
  r.rp_percent = 100.0 * static_cast<double>(r.random_params) /
                 static_cast<double>(r.pretrained_params);
  r.gmacs_encoder = encoder_gmacs(cfg.vit, in_h, in_w);
  r.gmacs_decoder = head_gmacs(cfg, in_h, in_w);
  r.gmacs_total = r.gmacs_encoder + r.gmacs_decoder;
  return r;
}

std::string CostReport::to_text() const {
  std::ostringstream oss;
  oss.setf(std::ios::fixed);
  oss.precision(2);
  oss << "input: " << input_h << "x" << input_w << "\n"
      << "params total:      " << static_cast<double>(total_params) / 1e6 << "M\n"
      << "params pretrained: " << static_cast<double>(pretrained_params) / 1e6 << "M\n"
      << "params random:     " << static_cast<double>(random_params) / 1e6 << "M\n"
      << "R/P:               " << rp_percent << "%\n"
      << "GMACs encoder:     " << gmacs_encoder << "\n"
      << "GMACs decoder:     " << gmacs_decoder << "\n"
      << "GMACs total:       " << gmacs_total << "\n"
      << "(1 MAC counted as 1 FLOP; convs and matmuls only)\n";
  return oss.str();
}

std::string CostReport::to_kv() const {
  std::ostringstream oss;
  oss.precision(12);
  oss << "input_h=" << input_h << "\ninput_w=" << input_w << "\n"
      << "params_total=" << total_params << "\n"
      << "params_pretrained=" << pretrained_params << "\n"
      << "params_random=" << random_params << "\n"
      << "rp_percent=" << rp_percent << "\n"
      << "gmacs_encoder=" << gmacs_encoder << "\n"
      << "gmacs_decoder=" << gmacs_decoder << "\n"
      << "gmacs_total=" << gmacs_total << "\n";
  return oss.str();
}

}  // namespace ps
