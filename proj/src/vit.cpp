#include "ps/vit.hpp"

namespace ps {

int64_t relpos_table_index(int64_t h, int64_t w, int64_t from_r, int64_t from_c,
                           int64_t to_r, int64_t to_c) {
  int64_t dr = to_r - from_r, dc = to_c - from_c;
  return (dr + h - 1) * (2 * w - 1) + (dc + w - 1);
}

std::vector<int64_t> relpos_index_map(int64_t h, int64_t w) {
  int64_t n = h * w;
  int64_t table = (2 * h - 1) * (2 * w - 1) + 3;
  std::vector<int64_t> idx(static_cast<size_t>((n + 1) * (n + 1)));
  auto set = [&](int64_t i, int64_t j, int64_t v) { idx[static_cast<size_t>(i * (n + 1) + j)] = v; };
  set(0, 0, table - 1);                      // cls -> cls
  for (int64_t j = 1; j <= n; ++j) set(0, j, table - 3);  // cls -> token
  for (int64_t i = 1; i <= n; ++i) set(i, 0, table - 2);  // token -> cls
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j)
      set(i + 1, j + 1, relpos_table_index(h, w, i / w, i % w, j / w, j % w));
  return idx;
}

ViTBlock::ViTBlock(const ViTConfig& cfg, double drop, Rng& rng)
    : norm1(cfg.embed_dim, -1),
      norm2(cfg.embed_dim, -1),
      attn(cfg.embed_dim, cfg.num_heads, rng),
      mlp_fc1(cfg.embed_dim, static_cast<int64_t>(cfg.embed_dim * cfg.mlp_ratio), rng),
      mlp_fc2(static_cast<int64_t>(cfg.embed_dim * cfg.mlp_ratio), cfg.embed_dim, rng),
      drop_prob(drop) {
  if (cfg.pos_embed == PosEmbedKind::kRelative2dBias) {
    int64_t g = cfg.grid();
    int64_t rows = (2 * g - 1) * (2 * g - 1) + 3;
    rel_bias_table = Tensor::zeros({rows, cfg.num_heads}).set_requires_grad(true);
  }
}

Tensor ViTBlock::forward(const Tensor& x, const std::vector<int64_t>& rel_index,
                         Rng& rng) const {
  int64_t tokens = x.dim(1);
  Tensor bias;
  if (rel_bias_table.defined()) {
    PS_CHECK(static_cast<int64_t>(rel_index.size()) == tokens * tokens,
             "vit: relative-bias index sized for a different resolution");
    Tensor rows = gather_rows(rel_bias_table, rel_index);  // [(N+1)^2, heads]
    bias = permute(reshape(rows, {tokens, tokens, -1}), {2, 0, 1});
  }
  Tensor h = norm1.forward(x);
  h = attn.forward(h, h, h, Tensor(), bias);
  Tensor y = add(x, drop_path(h, drop_prob, rng));
  Tensor m = mlp_fc2.forward(gelu(mlp_fc1.forward(norm2.forward(y))));
  return add(y, drop_path(m, drop_prob, rng));
}

void ViTBlock::params(const std::string& prefix, ParamList& out) const {
  norm1.params(prefix + ".norm1", out);
  attn.params(prefix + ".attn", out);
  if (rel_bias_table.defined())
    out.push_back({prefix + ".attn.rel_bias_table", rel_bias_table, true, true});
  norm2.params(prefix + ".norm2", out);
  mlp_fc1.params(prefix + ".mlp.fc1", out);
  mlp_fc2.params(prefix + ".mlp.fc2", out);
}

ViTEncoder::ViTEncoder(const ViTConfig& c, Rng& rng) : cfg(c) {
  cfg.validate();
  int p = static_cast<int>(cfg.patch_size);
  patch_proj = Conv2d(3, cfg.embed_dim, p, p, 0, 1, rng);
  cls_token = init::normal({1, cfg.embed_dim}, rng, 0.02).set_requires_grad(true);
  if (cfg.pos_embed == PosEmbedKind::kAbsolute1d)
    pos_table = init::normal({cfg.tokens() + 1, cfg.embed_dim}, rng, 0.02).set_requires_grad(true);
  else
    rel_index = relpos_index_map(cfg.grid(), cfg.grid());
  blocks.reserve(static_cast<size_t>(cfg.depth));
  for (int64_t i = 0; i < cfg.depth; ++i) {
    double drop = cfg.depth > 1 ? cfg.drop_path_rate * static_cast<double>(i) /
                                      static_cast<double>(cfg.depth - 1)
                                : 0.0;
    blocks.emplace_back(cfg, drop, rng);
  }
  final_norm = LayerNorm(cfg.embed_dim, -1);
}

Tensor ViTEncoder::patch_embed(const Tensor& image) const {
  PS_CHECK(image.ndim() == 4 && image.dim(1) == 3, "vit: image must be [B,3,H,W]");
  PS_CHECK(image.dim(2) % cfg.patch_size == 0 && image.dim(3) % cfg.patch_size == 0,
           "vit: image dims not divisible by patch size");
  Tensor f = patch_proj.forward(image);  // [B, C, gh, gw]
  int64_t B = f.dim(0), C = f.dim(1);
  return permute(reshape(f, {B, C, -1}), {0, 2, 1});
}

Tensor ViTEncoder::encode(const Tensor& image, Rng& rng) const {
  PS_CHECK(image.dim(2) == cfg.img_size && image.dim(3) == cfg.img_size,
           "vit: input " << image.dim(2) << "x" << image.dim(3)
                         << " does not match configured size " << cfg.img_size
                         << " (position tables are not interpolated)");
  Tensor tok = patch_embed(image);
  int64_t B = tok.dim(0), N = tok.dim(1), C = tok.dim(2);
  Tensor cls = expand_batch(cls_token, B);  // [B,1,C]
  tok = concat({cls, tok}, 1);
  if (pos_table.defined()) tok = add(tok, pos_table);
  for (const ViTBlock& blk : blocks) tok = blk.forward(tok, rel_index, rng);
  tok = final_norm.forward(tok);
  Tensor patches = slice(tok, 1, 1, N);  // drop class token
  int64_t g = cfg.grid();
  return reshape(permute(patches, {0, 2, 1}), {B, C, g, g});
}

void ViTEncoder::params(const std::string& prefix, ParamList& out) const {
  patch_proj.params(prefix + ".patch_embed", out);
  out.push_back({prefix + ".cls_token", cls_token, true, true});
  if (pos_table.defined()) out.push_back({prefix + ".pos_embed", pos_table, true, true});
  for (size_t i = 0; i < blocks.size(); ++i)
    blocks[i].params(prefix + ".blocks." + std::to_string(i), out);
  final_norm.params(prefix + ".norm", out);
}

}  // namespace ps
