#pragma once

#include <string>

#include "ps/model.hpp"

namespace ps {

// Analytic parameter / multiply-accumulate accounting straight from the
// configuration; nothing is instantiated. MAC convention: convolutions and
// matrix multiplies only (norms, activations, interpolation and deformable
// grid sampling excluded), batch 1, reported in units of 1e9.
struct CostReport {
  int64_t total_params = 0;
  int64_t pretrained_params = 0;  // encoder
  int64_t random_params = 0;      // everything else
  double rp_percent = 0.0;        // random / pretrained * 100
  double gmacs_total = 0.0;
  double gmacs_encoder = 0.0;
  double gmacs_decoder = 0.0;
  int64_t input_h = 0, input_w = 0;

  std::string to_text() const;
  std::string to_kv() const;  // machine-readable key=value lines
};

int64_t count_encoder_params(const ViTConfig& cfg);
int64_t count_head_params(const ModelConfig& cfg);

double encoder_gmacs(const ViTConfig& cfg, int64_t in_h, int64_t in_w);
double head_gmacs(const ModelConfig& cfg, int64_t in_h, int64_t in_w);

// Eq. out = Conv1x1(Conv3x3(Up(Conv3x3(Up(x))))) decoder-only figure
double simple_upsample_decoder_gmacs(int64_t embed_dim, int64_t num_classes,
                                     int64_t in_h, int64_t in_w, int64_t patch = 16);

CostReport analyze_cost(const ModelConfig& cfg, int64_t in_h, int64_t in_w);

}  // namespace ps
