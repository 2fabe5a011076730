#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ps/gradcheck.hpp"
#include "ps/mask_decoder.hpp"

using namespace ps;

namespace {

DecoderConfig tiny_dc(int64_t layers = 4, int64_t sources = 2) {
  DecoderConfig c;
  c.width = 16;
  c.num_layers = layers;
  c.num_queries = 6;
  c.num_heads = 2;
  c.ffn_dim = 32;
  c.num_classes = 3;
  c.num_sources = sources;
  return c;
}

}  // namespace

TEST_CASE("init queries: shapes, seed determinism, seed separation") {
  Rng a1(42), a2(42), b(43);
  MaskDecoder d1(tiny_dc(), a1), d2(tiny_dc(), a2), d3(tiny_dc(), b);
  CHECK(d1.query_feat.shape() == Shape{6, 16});
  CHECK(d1.query_pos.shape() == Shape{6, 16});
  CHECK(d1.query_feat.to_vector() == d2.query_feat.to_vector());
  CHECK(d1.query_feat.to_vector() != d3.query_feat.to_vector());

  DecoderConfig full;  // width 256 / 100 queries default
  Rng r(1);
  MaskDecoder big(full, r);
  CHECK(big.query_feat.shape() == Shape{100, 256});
}

TEST_CASE("predict heads: zero embeddings, constant map, dot-product oracle") {
  DtypeGuard g64(DType::kF64);
  Rng rng(2);
  MaskDecoder dec(tiny_dc(), rng);
  Tensor queries = Tensor::randn({1, 6, 16}, rng);

  // zero the final mask-MLP layer -> all-zero mask logits (sigmoid 0.5)
  dec.mask_mlp3.weight.copy_from(std::vector<double>(16 * 16, 0.0));
  dec.mask_mlp3.bias.copy_from(std::vector<double>(16, 0.0));
  Tensor fm = Tensor::randn({1, 16, 3, 3}, rng);
  auto [cls, masks] = dec.predict(queries, fm);
  CHECK(cls.shape() == Shape{1, 6, 4});
  CHECK(masks.shape() == Shape{1, 6, 3, 3});
  for (int64_t i = 0; i < masks.numel(); ++i) CHECK(masks.impl()->value.get(i) == 0.0);

  // fresh decoder: constant F_mask gives spatially constant per-query masks
  Rng rng2(3);
  MaskDecoder dec2(tiny_dc(), rng2);
  Tensor cm = Tensor::full({1, 16, 3, 3}, 0.4);
  auto [cls2, m2] = dec2.predict(queries, cm);
  for (int64_t q = 0; q < 6; ++q) {
    double v = m2.at({0, q, 0, 0});
    for (int64_t i = 0; i < 9; ++i)
      CHECK(m2.impl()->value.get(q * 9 + i) == doctest::Approx(v).epsilon(1e-9));
  }

  // dot-product oracle on a 2-query, 3x3 map
  Tensor q2 = Tensor::randn({1, 2, 16}, rng2);
  auto [c3, m3] = dec2.predict(q2, fm);
  Tensor qn = dec2.decoder_norm.forward(q2);
  Tensor e = dec2.mask_mlp3.forward(relu(dec2.mask_mlp2.forward(relu(dec2.mask_mlp1.forward(qn)))));
  for (int64_t q = 0; q < 2; ++q)
    for (int64_t y = 0; y < 3; ++y)
      for (int64_t x = 0; x < 3; ++x) {
        double acc = 0;
        for (int64_t c = 0; c < 16; ++c) acc += e.at({0, q, c}) * fm.at({0, c, y, x});
        CHECK(m3.at({0, q, y, x}) == doctest::Approx(acc).epsilon(1e-9));
      }
}

TEST_CASE("attention mask construction and safeguard") {
  Tensor pos = Tensor::full({1, 2, 4, 4}, 3.0);
  Tensor m = MaskDecoder::attention_mask_from(pos, 2, 2);
  CHECK(m.shape() == Shape{1, 2, 4});
  for (int64_t i = 0; i < m.numel(); ++i) CHECK(m.impl()->value.get(i) == 0.0);

  Tensor negv = Tensor::full({1, 2, 4, 4}, -3.0);
  Tensor mn = MaskDecoder::attention_mask_from(negv, 2, 2);
  for (int64_t i = 0; i < mn.numel(); ++i) CHECK(mn.impl()->value.get(i) == 0.0);  // safeguard

  // boundary: logit exactly 0 -> sigmoid 0.5 -> kept (>= rule)
  Tensor zero = Tensor::zeros({1, 1, 2, 2});
  Tensor mz = MaskDecoder::attention_mask_from(zero, 2, 2);
  for (int64_t i = 0; i < mz.numel(); ++i) CHECK(mz.impl()->value.get(i) == 0.0);

  // mixed: one masked key
  Tensor mixed = Tensor::from_vector({1, 1, 1, 2}, {5.0, -5.0});
  Tensor mm = MaskDecoder::attention_mask_from(mixed, 1, 2);
  CHECK(mm.impl()->value.get(0) == 0.0);
  CHECK(mm.impl()->value.get(1) == kMaskedValue);
}

TEST_CASE("safeguard holds over 1000 random mask patterns") {
  Rng rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor logits = Tensor::empty({1, 3, 2, 2});
    for (int64_t i = 0; i < logits.numel(); ++i)
      logits.impl()->value.set(i, rng.uniform(-1.0, 1.0) < 0 ? -5.0 : 5.0);
    Tensor m = MaskDecoder::attention_mask_from(logits, 2, 2);
    for (int64_t q = 0; q < 3; ++q) {
      bool any_keep = false;
      for (int64_t k = 0; k < 4; ++k)
        if (m.impl()->value.get(q * 4 + k) == 0.0) any_keep = true;
      CHECK(any_keep);
    }
  }
}

TEST_CASE("decoder layer with zero weights is the identity on queries") {
  Rng rng(5);
  DecoderConfig dc = tiny_dc();
  DecoderLayer layer(dc, rng);
  ParamList ps;
  layer.params("l", ps);
  for (NamedParam& p : ps)
    p.tensor.copy_from(std::vector<double>(static_cast<size_t>(p.tensor.numel()), 0.0));
  for (NamedParam& p : ps)
    if (p.name.find("norm") != std::string::npos && p.name.substr(p.name.size() - 6) == "weight")
      p.tensor.copy_from(std::vector<double>(static_cast<size_t>(p.tensor.numel()), 1.0));
  Tensor q = Tensor::randn({1, 6, 16}, rng);
  Tensor qpos = Tensor::zeros({1, 6, 16});
  Tensor src = Tensor::randn({1, 9, 16}, rng);
  Tensor out = layer.forward(q, qpos, src, Tensor());
  for (int64_t i = 0; i < q.numel(); ++i)
    CHECK(out.impl()->value.get(i) == doctest::Approx(q.impl()->value.get(i)));
}

TEST_CASE("single spatial location source feeds every query the same value") {
  DtypeGuard g64(DType::kF64);
  Rng rng(6);
  DecoderConfig dc = tiny_dc();
  DecoderLayer layer(dc, rng);
  Tensor q = Tensor::randn({1, 6, 16}, rng);
  Tensor qpos = Tensor::randn({1, 6, 16}, rng);
  Tensor src = Tensor::randn({1, 1, 16}, rng);  // one key
  Tensor out = layer.forward(q, qpos, src, Tensor());
  // with one key the cross-attention adds the same vector to all queries
  Tensor n = layer.norm1.forward(q);
  Tensor attn_out = layer.cross_attn.forward(add(n, qpos), src, src);
  for (int64_t d = 0; d < 16; ++d) {
    double delta0 = attn_out.at({0, 0, d});
    for (int64_t qq = 1; qq < 6; ++qq)
      CHECK(attn_out.at({0, qq, d}) == doctest::Approx(delta0).epsilon(1e-9));
  }
  CHECK(out.shape() == Shape{1, 6, 16});
}

TEST_CASE("decoder layer gradients match finite differences") {
  DtypeGuard g64(DType::kF64);
  Rng rng(7);
  DecoderConfig dc = tiny_dc();
  DecoderLayer layer(dc, rng);
  Tensor qpos = Tensor::randn({1, 4, 16}, rng, 0.3);
  Tensor src = Tensor::randn({1, 6, 16}, rng);
  Tensor mask = Tensor::zeros({1, 4, 6});
  mask.impl()->value.set(2, kMaskedValue);
  Tensor q = Tensor::randn({1, 4, 16}, rng, 0.5);
  double err = finite_difference_check(
      [&](const Tensor& x) { return sum(layer.forward(x, qpos, src, mask)); }, q, 1e-5);
  CHECK(err < 1e-5);
  err = finite_difference_check(
      [&](const Tensor& x) { return sum(layer.forward(q, qpos, x, mask)); }, src.clone(), 1e-5);
  CHECK(err < 1e-5);
}

TEST_CASE("round-robin feeding: 3x6, 3x9, and prediction count") {
  std::vector<int64_t> seq6, seq9;
  for (int64_t j = 0; j < 6; ++j) seq6.push_back(round_robin_source(j, 3));
  for (int64_t j = 0; j < 9; ++j) seq9.push_back(round_robin_source(j, 3));
  CHECK(seq6 == std::vector<int64_t>{0, 1, 2, 0, 1, 2});
  CHECK(seq9 == std::vector<int64_t>{0, 1, 2, 0, 1, 2, 0, 1, 2});

  Rng rng(8);
  DecoderConfig dc = tiny_dc(4, 2);
  MaskDecoder dec(dc, rng);
  std::vector<Tensor> sources = {Tensor::randn({2, 16, 3, 3}, rng),
                                 Tensor::randn({2, 16, 3, 3}, rng)};
  Tensor fm = Tensor::randn({2, 16, 6, 6}, rng);
  EvalGuard eg;
  MaskClassOutput out = dec.run(sources, fm);
  CHECK(out.count() == 5);  // layers + 1
  for (auto& c : out.class_logits) CHECK(c.shape() == Shape{2, 6, 4});
  for (auto& m : out.mask_logits) CHECK(m.shape() == Shape{2, 6, 6, 6});

  // layer count must be a round-robin multiple of the source count
  DecoderConfig badc = tiny_dc(4, 3);
  CHECK_THROWS_AS(MaskDecoder(badc, rng), Error);
}

TEST_CASE("doubling the query count keeps all shape contracts") {
  Rng rng(9);
  DecoderConfig dc = tiny_dc();
  dc.num_queries = 12;
  MaskDecoder dec(dc, rng);
  std::vector<Tensor> sources = {Tensor::randn({1, 16, 2, 2}, rng),
                                 Tensor::randn({1, 16, 2, 2}, rng)};
  Tensor fm = Tensor::randn({1, 16, 4, 4}, rng);
  EvalGuard eg;
  MaskClassOutput out = dec.run(sources, fm);
  for (auto& c : out.class_logits) CHECK(c.shape() == Shape{1, 12, 4});
  for (auto& m : out.mask_logits) CHECK(m.shape() == Shape{1, 12, 4, 4});
}

TEST_CASE("width-256 decoder layer parameter arithmetic") {
  // 4*W^2+4W per attention, two attentions; FFN W*F + F + F*W + W; 3 norms
  int64_t W = 256, F = 2048;
  int64_t attn = 4 * (W * W + W);
  int64_t ffn = W * F + F + F * W + W;
  int64_t norms = 3 * 2 * W;
  int64_t per_layer = 2 * attn + ffn + norms;
  CHECK(per_layer == 1578752);  // ~1.58M
  CHECK(6 * per_layer / 1e6 == doctest::Approx(9.47).epsilon(0.01));

  Rng rng(10);
  DecoderConfig dc;  // width 256 defaults
  DecoderLayer layer(dc, rng);
  ParamList ps;
  layer.params("l", ps);
  int64_t n = 0;
  for (const NamedParam& p : ps) n += p.tensor.numel();
  CHECK(n == per_layer);
}
