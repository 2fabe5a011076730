#include "ps/config.hpp"

#include <fstream>
#include <sstream>

namespace ps {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& origin, int line, const std::string& msg) {
  std::ostringstream oss;
  oss << origin << ":" << line << ": " << msg;
  throw ConfigError(oss.str());
}

struct Kv {
  std::string section, key, value;
  int line;
};

int64_t to_i64(const Kv& kv, const std::string& origin) {
  try {
    size_t pos = 0;
    int64_t v = std::stoll(kv.value, &pos);
    if (pos != kv.value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    bad(origin, kv.line, "expected integer for '" + kv.key + "', got '" + kv.value + "'");
  }
}

double to_f64(const Kv& kv, const std::string& origin) {
  try {
    size_t pos = 0;
    double v = std::stod(kv.value, &pos);
    if (pos != kv.value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    bad(origin, kv.line, "expected number for '" + kv.key + "', got '" + kv.value + "'");
  }
}

bool to_bool(const Kv& kv, const std::string& origin) {
  if (kv.value == "true" || kv.value == "1") return true;
  if (kv.value == "false" || kv.value == "0") return false;
  bad(origin, kv.line, "expected true/false for '" + kv.key + "'");
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  std::vector<Kv> entries;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') bad(origin, lineno, "unterminated section header");
      section = trim(t.substr(1, t.size() - 2));
      if (section != "model" && section != "train" && section != "data" && section != "eval")
        bad(origin, lineno, "unknown section [" + section + "]");
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos) bad(origin, lineno, "expected 'key = value'");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty()) bad(origin, lineno, "empty key");
    if (section.empty()) bad(origin, lineno, "key '" + key + "' outside any section");
    entries.push_back({section, key, value, lineno});
  }

  for (const Kv& kv : entries) {
    const std::string& k = kv.key;
    if (kv.section == "model") {
      if (k == "variant") cfg.model.variant = variant_from_name(kv.value);
      else if (k == "img_size") cfg.model.vit.img_size = to_i64(kv, origin);
      else if (k == "patch_size") cfg.model.vit.patch_size = to_i64(kv, origin);
      else if (k == "embed_dim") cfg.model.vit.embed_dim = to_i64(kv, origin);
      else if (k == "depth") cfg.model.vit.depth = to_i64(kv, origin);
      else if (k == "num_heads") cfg.model.vit.num_heads = to_i64(kv, origin);
      else if (k == "mlp_ratio") cfg.model.vit.mlp_ratio = to_f64(kv, origin);
      else if (k == "pos_embed") {
        if (kv.value == "absolute-1d") cfg.model.vit.pos_embed = PosEmbedKind::kAbsolute1d;
        else if (kv.value == "relative-2d-bias") cfg.model.vit.pos_embed = PosEmbedKind::kRelative2dBias;
        else bad(origin, kv.line, "pos_embed must be absolute-1d or relative-2d-bias");
      }
      else if (k == "drop_path_rate") cfg.model.vit.drop_path_rate = to_f64(kv, origin);
      else if (k == "num_classes") cfg.model.num_classes = to_i64(kv, origin);
      else if (k == "decoder_width") cfg.model.decoder_width = to_i64(kv, origin);
      else if (k == "groups") cfg.model.groups = to_i64(kv, origin);
      else if (k == "num_queries") cfg.model.num_queries = to_i64(kv, origin);
      else if (k == "decoder_layers") cfg.model.decoder_layers = to_i64(kv, origin);
      else if (k == "decoder_heads") cfg.model.decoder_heads = to_i64(kv, origin);
      else if (k == "ffn_dim") cfg.model.ffn_dim = to_i64(kv, origin);
      else if (k == "deform_heads") cfg.model.deform_heads = to_i64(kv, origin);
      else if (k == "deform_points") cfg.model.deform_points = to_i64(kv, origin);
      else if (k == "deform_ffn") cfg.model.deform_ffn = to_i64(kv, origin);
      else if (k == "seed") cfg.model.seed = static_cast<uint64_t>(to_i64(kv, origin));
      else bad(origin, kv.line, "unknown key '" + k + "' in [model]");
    } else if (kv.section == "train") {
      if (k == "learning_rate") cfg.train.learning_rate = to_f64(kv, origin);
      else if (k == "layer_decay") cfg.train.layer_decay = to_f64(kv, origin);
      else if (k == "head_lr_scale") cfg.train.head_lr_scale = to_f64(kv, origin);
      else if (k == "batch_size") cfg.train.batch_size = to_i64(kv, origin);
      else if (k == "total_iters") cfg.train.total_iters = to_i64(kv, origin);
      else if (k == "warmup_iters") cfg.train.warmup_iters = to_i64(kv, origin);
      else if (k == "optimizer") {
        if (kv.value != "adamw") bad(origin, kv.line, "only the adamw optimizer is supported");
        cfg.train.optimizer = kv.value;
      }
      else if (k == "weight_decay") cfg.train.weight_decay = to_f64(kv, origin);
      else if (k == "grad_clip") cfg.train.grad_clip = to_f64(kv, origin);
      else if (k == "seed") cfg.train.seed = static_cast<uint64_t>(to_i64(kv, origin));
      else if (k == "llrd_literal") cfg.train.llrd_literal = to_bool(kv, origin);
      else if (k == "log_every") cfg.train.log_every = to_i64(kv, origin);
      else if (k == "metrics_log") cfg.train.metrics_log = kv.value;
      else if (k == "checkpoint_out") cfg.train.checkpoint_out = kv.value;
      else bad(origin, kv.line, "unknown key '" + k + "' in [train]");
    } else if (kv.section == "data") {
      if (k == "synthetic") cfg.data.synthetic = to_bool(kv, origin);
      else if (k == "root") cfg.data.root = kv.value;
      else if (k == "image_size") cfg.data.spec.image_size = to_i64(kv, origin);
      else if (k == "num_classes") cfg.data.spec.num_classes = to_i64(kv, origin);
      else if (k == "num_train") cfg.data.spec.num_train = to_i64(kv, origin);
      else if (k == "num_val") cfg.data.spec.num_val = to_i64(kv, origin);
      else if (k == "shapes_min") cfg.data.spec.shapes_min = to_i64(kv, origin);
      else if (k == "shapes_max") cfg.data.spec.shapes_max = to_i64(kv, origin);
      else if (k == "noise_sigma") cfg.data.spec.noise_sigma = to_f64(kv, origin);
      else if (k == "seed") cfg.data.spec.seed = static_cast<uint64_t>(to_i64(kv, origin));
      else bad(origin, kv.line, "unknown key '" + k + "' in [data]");
    } else {  // eval
      if (k == "crop") cfg.eval.crop = to_i64(kv, origin);
      else if (k == "stride") cfg.eval.stride = to_i64(kv, origin);
      else if (k == "checkpoint") cfg.eval.checkpoint = kv.value;
      else bad(origin, kv.line, "unknown key '" + k + "' in [eval]");
    }
  }

  if (cfg.data.synthetic) {
    PS_CHECK(cfg.data.spec.num_classes >= 2, "config: synthetic data needs K >= 2");
    PS_CHECK(cfg.data.spec.shapes_min >= 0 && cfg.data.spec.shapes_max <= 5 &&
                 cfg.data.spec.shapes_min <= cfg.data.spec.shapes_max,
             "config: shapes per image must lie in [0,5]");
  }
  cfg.model.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream oss;
  oss << in.rdbuf();
  return parse_config_text(oss.str(), path);
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream o;
  o.precision(17);
  o << "[model]\n";
  o << "variant = " << variant_name(cfg.model.variant) << "\n";
  o << "img_size = " << cfg.model.vit.img_size << "\n";
  o << "patch_size = " << cfg.model.vit.patch_size << "\n";
  o << "embed_dim = " << cfg.model.vit.embed_dim << "\n";
  o << "depth = " << cfg.model.vit.depth << "\n";
  o << "num_heads = " << cfg.model.vit.num_heads << "\n";
  o << "mlp_ratio = " << cfg.model.vit.mlp_ratio << "\n";
  o << "pos_embed = "
    << (cfg.model.vit.pos_embed == PosEmbedKind::kAbsolute1d ? "absolute-1d" : "relative-2d-bias")
    << "\n";
  o << "drop_path_rate = " << cfg.model.vit.drop_path_rate << "\n";
  o << "num_classes = " << cfg.model.num_classes << "\n";
  o << "decoder_width = " << cfg.model.decoder_width << "\n";
  o << "groups = " << cfg.model.groups << "\n";
  o << "num_queries = " << cfg.model.num_queries << "\n";
  o << "decoder_layers = " << cfg.model.decoder_layers << "\n";
  o << "decoder_heads = " << cfg.model.decoder_heads << "\n";
  o << "ffn_dim = " << cfg.model.ffn_dim << "\n";
  o << "deform_heads = " << cfg.model.deform_heads << "\n";
  o << "deform_points = " << cfg.model.deform_points << "\n";
  o << "deform_ffn = " << cfg.model.deform_ffn << "\n";
  o << "seed = " << cfg.model.seed << "\n";
  o << "\n[train]\n";
  o << "learning_rate = " << cfg.train.learning_rate << "\n";
  o << "layer_decay = " << cfg.train.layer_decay << "\n";
  o << "head_lr_scale = " << cfg.train.head_lr_scale << "\n";
  o << "batch_size = " << cfg.train.batch_size << "\n";
  o << "total_iters = " << cfg.train.total_iters << "\n";
  o << "warmup_iters = " << cfg.train.warmup_iters << "\n";
  o << "optimizer = " << cfg.train.optimizer << "\n";
  o << "weight_decay = " << cfg.train.weight_decay << "\n";
  o << "grad_clip = " << cfg.train.grad_clip << "\n";
  o << "seed = " << cfg.train.seed << "\n";
  o << "llrd_literal = " << (cfg.train.llrd_literal ? "true" : "false") << "\n";
  o << "log_every = " << cfg.train.log_every << "\n";
  o << "metrics_log = " << cfg.train.metrics_log << "\n";
  o << "checkpoint_out = " << cfg.train.checkpoint_out << "\n";
  o << "\n[data]\n";
  o << "synthetic = " << (cfg.data.synthetic ? "true" : "false") << "\n";
  if (!cfg.data.root.empty()) o << "root = " << cfg.data.root << "\n";
  o << "image_size = " << cfg.data.spec.image_size << "\n";
  o << "num_classes = " << cfg.data.spec.num_classes << "\n";
  o << "num_train = " << cfg.data.spec.num_train << "\n";
  o << "num_val = " << cfg.data.spec.num_val << "\n";
  o << "shapes_min = " << cfg.data.spec.shapes_min << "\n";
  o << "shapes_max = " << cfg.data.spec.shapes_max << "\n";
  o << "noise_sigma = " << cfg.data.spec.noise_sigma << "\n";
  o << "seed = " << cfg.data.spec.seed << "\n";
  o << "\n[eval]\n";
  o << "crop = " << cfg.eval.crop << "\n";
  o << "stride = " << cfg.eval.stride << "\n";
  if (!cfg.eval.checkpoint.empty()) o << "checkpoint = " << cfg.eval.checkpoint << "\n";
  return o.str();
}

}  // namespace ps
