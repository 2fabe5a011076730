#pragma once

#include <string>

#include "ps/model.hpp"

namespace ps {

struct ConfigError : Error {
  using Error::Error;
};

struct SyntheticSpec {
  int64_t image_size = 64;
  int64_t num_classes = 4;
  int64_t num_train = 200;
  int64_t num_val = 50;
  int64_t shapes_min = 1;
  int64_t shapes_max = 5;
  double noise_sigma = 8.0;  // in 0..255 units
  uint64_t seed = 7;
};

struct TrainConfig {
  double learning_rate = 3e-5;
  double layer_decay = 0.9;
  double head_lr_scale = 10.0;
  int64_t batch_size = 16;
  int64_t total_iters = 80000;
  int64_t warmup_iters = 1500;
  std::string optimizer = "adamw";
  double weight_decay = 0.05;
  double grad_clip = 0.01;
  uint64_t seed = 0;
  bool llrd_literal = false;
  int64_t log_every = 1;
  std::string metrics_log = "metrics.tsv";
  std::string checkpoint_out = "model.pseg";
};

struct DataConfig {
  bool synthetic = true;
  std::string root;  // dataset directory when not synthetic
  SyntheticSpec spec;
};

struct EvalConfig {
  int64_t crop = 64;
  int64_t stride = 43;
  std::string checkpoint;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;
};

// Line-based `key = value` file with [section] headers. Unknown keys and
// malformed lines raise ConfigError with the line number.
RunConfig parse_config_text(const std::string& text, const std::string& origin = "<config>");
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& cfg);

}  // namespace ps
