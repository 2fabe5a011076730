#include "ps/refiner.hpp"

namespace ps {

LinearDecoder::LinearDecoder(int64_t in_ch, int64_t num_classes, Rng& rng)
    : proj(in_ch, num_classes, 1, 1, 0, 1, rng) {}

void LinearDecoder::params(const std::string& prefix, ParamList& out) const {
  proj.params(prefix + ".proj", out);
}

SimpleUpsampleDecoder::SimpleUpsampleDecoder(int64_t in_ch, int64_t num_classes, Rng& rng)
    : conv1(in_ch, in_ch, 3, 1, 1, 1, rng),
      conv2(in_ch, in_ch, 3, 1, 1, 1, rng),
      head(in_ch, num_classes, 1, 1, 0, 1, rng),
      bn1(in_ch),
      bn2(in_ch) {}

Tensor SimpleUpsampleDecoder::forward(const Tensor& f_vit) {
  Tensor x = bilinear_upsample(f_vit, 2);
  x = relu(bn1.forward(conv1.forward(x)));
  x = bilinear_upsample(x, 2);
  x = relu(bn2.forward(conv2.forward(x)));
  return head.forward(x);
}

void SimpleUpsampleDecoder::params(const std::string& prefix, ParamList& out) const {
  conv1.params(prefix + ".conv1", out);
  bn1.params(prefix + ".bn1", out);
  conv2.params(prefix + ".conv2", out);
  bn2.params(prefix + ".bn2", out);
  head.params(prefix + ".head", out);
}

Refiner::Refiner(const RefinerConfig& c, Rng& rng) : cfg(c) {
  cfg.validate();
  norm_pre = LayerNorm(cfg.in_ch, 1);
  norm_post = LayerNorm(cfg.in_ch, 1);
  conv_refine = Conv2d(cfg.in_ch, cfg.in_ch, 3, 1, 1, 1, rng);
  conv_group = Conv2d(cfg.in_ch, cfg.groups * cfg.width, 3, 1, 1,
                      static_cast<int>(cfg.groups), rng);
  norm_group = LayerNorm(cfg.groups * cfg.width, 1);
  conv_mask1 = Conv2d(cfg.in_ch, cfg.width, 3, 1, 1, 1, rng);
  bn_mask = BatchNorm2d(cfg.width);
  conv_mask2 = Conv2d(cfg.width, cfg.width, 1, 1, 0, 1, rng);
}

Tensor Refiner::refine(const Tensor& f_vit) const {
  Tensor x = bilinear_upsample(f_vit, 2);
  x = norm_pre.forward(x);
  x = conv_refine.forward(x);
  x = norm_post.forward(x);
  return gelu(x);
}

std::vector<Tensor> Refiner::width_to_depth(const Tensor& f_refine) const {
  Tensor x = conv_group.forward(f_refine);
  x = norm_group.forward(x);
  return split_channels(x, 1, cfg.groups);
}

Tensor Refiner::mask_feature(const Tensor& f_refine) {
  Tensor x = bilinear_upsample(f_refine, 2);
  x = conv_mask1.forward(x);
  x = relu(bn_mask.forward(x));
  return conv_mask2.forward(x);
}

void Refiner::params(const std::string& prefix, ParamList& out) const {
  norm_pre.params(prefix + ".norm_pre", out);
  conv_refine.params(prefix + ".conv_refine", out);
  norm_post.params(prefix + ".norm_post", out);
  conv_group.params(prefix + ".conv_group", out);
  norm_group.params(prefix + ".norm_group", out);
  conv_mask1.params(prefix + ".mask.conv1", out);
  bn_mask.params(prefix + ".mask.bn", out);
  conv_mask2.params(prefix + ".mask.conv2", out);
}

}  // namespace ps
