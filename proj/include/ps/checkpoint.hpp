#pragma once

#include "ps/module.hpp"

namespace ps {

// "PSEG" checkpoints: magic, u32 format version, then one record per tensor:
//   u32 name length, utf-8 name, u8 dtype tag (0=f32, 1=f64), u32 rank,
//   dims as u64, raw little-endian values.
constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const ParamList& tensors);

// strict: every stored record must land in a parameter and every parameter
// must be filled. Non-strict skips unknown / missing names (the
// pretrained-encoder injection path); shape mismatches always error.
void load_checkpoint(const std::string& path, const ParamList& tensors, bool strict);

// names present in a checkpoint, in file order
std::vector<std::string> checkpoint_names(const std::string& path);

}  // namespace ps
