#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "ps/checkpoint.hpp"
#include "ps/costing.hpp"
#include "ps/data.hpp"
#include "ps/infer.hpp"
#include "ps/train.hpp"

namespace fs = std::filesystem;
using namespace ps;

namespace {

SegDataset load_or_generate(const RunConfig& cfg, const std::string& workdir) {
  if (!cfg.data.synthetic) return load_dataset(cfg.data.root);
  std::string dir = cfg.data.root.empty() ? (fs::path(workdir) / "synthetic").string()
                                          : cfg.data.root;
  if (!fs::exists(fs::path(dir) / "manifest.txt")) {
    std::cout << "generating synthetic dataset in " << dir << "\n";
    generate_synthetic(cfg.data.spec, dir);
  }
  return load_dataset(dir);
}

Tensor stack_batch(const std::vector<Tensor>& images, const std::vector<size_t>& ids) {
  std::vector<Tensor> list;
  list.reserve(ids.size());
  for (size_t i : ids) list.push_back(images[i]);
  return concat(list, 0);
}

int run_train(const RunConfig& cfg, const std::string& workdir) {
  SegDataset ds = load_or_generate(cfg, workdir);
  PS_CHECK(!ds.train_images.empty(), "train: dataset has no training split");
  PS_CHECK(ds.image_size == cfg.model.vit.img_size,
           "train: dataset image size " << ds.image_size << " != model img_size "
                                        << cfg.model.vit.img_size);
  SegModel model(cfg.model);
  LRSchedule sched = build_lr_schedule(cfg.train.learning_rate, cfg.train.layer_decay,
                                       cfg.train.head_lr_scale, cfg.model.vit.depth);
  sched.warmup_iters = cfg.train.warmup_iters;
  sched.total_iters = cfg.train.total_iters;
  sched.literal_direction = cfg.train.llrd_literal;
  AdamWConfig oc;
  oc.weight_decay = cfg.train.weight_decay;
  Trainer trainer(model, sched, oc, LossWeights{}, cfg.train.grad_clip);

  int64_t mask_size = cfg.model.vit.img_size / cfg.model.output_stride();
  std::vector<GTSegmentation> gt_cache(ds.train_images.size());
  std::vector<std::vector<int64_t>> label_cache(ds.train_images.size());
  for (size_t i = 0; i < ds.train_images.size(); ++i) {
    if (cfg.model.is_mask_cls())
      gt_cache[i] = labels_to_gt(ds.train_labels[i], ds.image_size, mask_size);
    else
      label_cache[i] = downsample_labels(ds.train_labels[i], ds.image_size, mask_size);
  }

  std::ofstream log(fs::path(workdir) / cfg.train.metrics_log);
  PS_CHECK(log.good(), "train: cannot open metrics log");
  log << "iter\tloss";
  for (int g = 0; g < sched.num_groups(); ++g) log << "\tlr_g" << g;
  log << "\n";

  Rng order_rng(cfg.train.seed + 1);
  std::vector<size_t> order(ds.train_images.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  size_t cursor = order.size();

  for (int64_t iter = 0; iter < cfg.train.total_iters; ++iter) {
    std::vector<size_t> ids;
    for (int64_t b = 0; b < cfg.train.batch_size; ++b) {
      if (cursor >= order.size()) {
        for (size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1], order[static_cast<size_t>(order_rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
        cursor = 0;
      }
      ids.push_back(order[cursor++]);
    }
    Tensor batch = stack_batch(ds.train_images, ids);
    TrainStats stats;
    if (cfg.model.is_mask_cls()) {
      std::vector<GTSegmentation> gts;
      for (size_t i : ids) gts.push_back(gt_cache[i]);
      stats = trainer.step(batch, gts, iter);
    } else {
      std::vector<int64_t> labels;
      for (size_t i : ids)
        labels.insert(labels.end(), label_cache[i].begin(), label_cache[i].end());
      stats = trainer.step_pixel(batch, labels, iter);
    }
    if (iter % cfg.train.log_every == 0 || iter + 1 == cfg.train.total_iters) {
      log << iter << "\t" << stats.loss;
      for (int g = 0; g < sched.num_groups(); ++g) log << "\t" << sched.lr_at(iter, g);
      log << "\n";
      log.flush();
      std::cout << "iter " << iter << " loss " << stats.loss << "\n";
    }
  }

  ParamList to_save = model.params();
  ParamList opt_state = trainer.optimizer().state_tensors();
  to_save.insert(to_save.end(), opt_state.begin(), opt_state.end());
  std::string ckpt = (fs::path(workdir) / cfg.train.checkpoint_out).string();
  save_checkpoint(ckpt, to_save);
  std::cout << "saved checkpoint to " << ckpt << "\n";
  return 0;
}

int run_eval(const RunConfig& cfg, const std::string& workdir, const std::string& ckpt_flag) {
  SegDataset ds = load_or_generate(cfg, workdir);
  PS_CHECK(!ds.val_images.empty(), "eval: dataset has no val split");
  SegModel model(cfg.model);
  std::string ckpt = !ckpt_flag.empty() ? ckpt_flag : cfg.eval.checkpoint;
  if (!ckpt.empty()) load_checkpoint(ckpt, model.params(), false);
  ConfusionMatrix conf = evaluate_images(model, ds.val_images, ds.val_labels,
                                         cfg.eval.crop, cfg.eval.stride);
  std::vector<double> per_class;
  double m = miou(conf, &per_class);
  for (size_t c = 0; c < per_class.size(); ++c)
    if (per_class[c] >= 0)
      std::cout << "IoU class " << c << ": " << per_class[c] << "\n";
  std::cout << "mIoU: " << m << "\n";
  return 0;
}

int run_count(const RunConfig& cfg) {
  CostReport r = analyze_cost(cfg.model, cfg.model.vit.img_size, cfg.model.vit.img_size);
  std::cout << r.to_text() << "\n" << r.to_kv();
  return 0;
}

int run_bench(const RunConfig& cfg, int warmup, int repeats) {
  SegModel model(cfg.model);
  Rng rng(1);
  Tensor input = Tensor::randn({1, 3, cfg.model.vit.img_size, cfg.model.vit.img_size}, rng);
  double ms = benchmark_median_ms(
      [&] {
        NoGradGuard ng;
        EvalGuard eg;
        model.forward(input);
        Tape::get().clear();
      },
      warmup, repeats);
  std::cout << "variant: " << variant_name(cfg.model.variant) << "\n"
            << "input: " << cfg.model.vit.img_size << "x" << cfg.model.vit.img_size << "\n"
            << "median_forward_ms=" << ms << "\n"
            << "hardware: single-process CPU, " << num_threads() << " threads\n";
  return 0;
}

int run_dump(const RunConfig& cfg, const std::string& image_path, const std::string& stage,
             const std::string& out_dir, const std::string& ckpt) {
  PS_CHECK(cfg.model.variant == Variant::kPlainSeg,
           "dump-features: refiner stages exist only for the plainseg variant");
  SegModel model(cfg.model);
  if (!ckpt.empty()) load_checkpoint(ckpt, model.params(), false);
  Tensor image;
  if (image_path.empty()) {
    Rng rng(5);
    image = Tensor::randn({1, 3, cfg.model.vit.img_size, cfg.model.vit.img_size}, rng);
  } else {
    image = image_to_tensor(read_ppm(image_path));
  }
  NoGradGuard ng;
  EvalGuard eg;
  SegModel::ForwardResult fwd = model.forward(image, true);
  fs::create_directories(out_dir);
  auto save = [&](const Tensor& f, const std::string& name) {
    write_pgm((fs::path(out_dir) / (name + ".pgm")).string(), feature_map_to_image(f));
    std::cout << "wrote " << (fs::path(out_dir) / (name + ".pgm")).string() << "\n";
  };
  if (stage == "pre-refine") save(fwd.pre_refine, "pre-refine");
  else if (stage == "post-refine") save(fwd.post_refine, "post-refine");
  else if (stage == "groups" || stage.rfind("group-", 0) == 0) {
    if (stage == "groups") {
      for (size_t i = 0; i < fwd.group_features.size(); ++i)
        save(fwd.group_features[i], "group-" + std::to_string(i));
    } else {
      size_t idx = static_cast<size_t>(std::stoll(stage.substr(6)));
      PS_CHECK(idx < fwd.group_features.size(), "dump-features: group index out of range");
      save(fwd.group_features[idx], stage);
    }
  } else if (stage == "all") {
    save(fwd.pre_refine, "pre-refine");
    save(fwd.post_refine, "post-refine");
    for (size_t i = 0; i < fwd.group_features.size(); ++i)
      save(fwd.group_features[i], "group-" + std::to_string(i));
  } else {
    fail("unknown stage '" + stage + "' (pre-refine | post-refine | group-i | groups | all)");
  }
  Tape::get().clear();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PlainSeg / PlainSeg-Hier semantic segmentation over a plain ViT"};
  app.require_subcommand(1);

  std::string config_path, workdir = ".", ckpt, image_path, stage = "all", out_dir = "dumps";
  std::string gen_out;
  int warmup = 2, repeats = 9;
  int64_t seed_override = -1;

  auto add_cfg = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "run configuration file")->required();
    sub->add_option("-w,--workdir", workdir, "output directory");
  };

  CLI::App* train = app.add_subcommand("train", "train a model");
  add_cfg(train);
  CLI::App* eval = app.add_subcommand("eval", "evaluate mIoU on the val split");
  add_cfg(eval);
  eval->add_option("--checkpoint", ckpt, "checkpoint to load");
  CLI::App* count = app.add_subcommand("count", "analytic parameter/FLOP report");
  add_cfg(count);
  CLI::App* bench = app.add_subcommand("bench", "median forward latency");
  add_cfg(bench);
  bench->add_option("--warmup", warmup, "warmup runs");
  bench->add_option("--repeats", repeats, "timed runs");
  CLI::App* dump = app.add_subcommand("dump-features", "write refiner feature-map PGMs");
  add_cfg(dump);
  dump->add_option("--image", image_path, "input PPM (random input when omitted)");
  dump->add_option("--stage", stage, "pre-refine | post-refine | group-i | groups | all");
  dump->add_option("--out", out_dir, "output directory");
  dump->add_option("--checkpoint", ckpt, "checkpoint to load");
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic shapes dataset");
  add_cfg(gen);
  gen->add_option("--out", gen_out, "dataset directory (default from config)");
  gen->add_option("--seed", seed_override, "override the dataset seed");

  CLI11_PARSE(app, argc, argv);

  RunConfig cfg;
  try {
    cfg = load_config(config_path);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (train->parsed()) return run_train(cfg, workdir);
    if (eval->parsed()) return run_eval(cfg, workdir, ckpt);
    if (count->parsed()) return run_count(cfg);
    if (bench->parsed()) return run_bench(cfg, warmup, repeats);
    if (dump->parsed()) return run_dump(cfg, image_path, stage, out_dir, ckpt);
    if (gen->parsed()) {
      if (seed_override >= 0) cfg.data.spec.seed = static_cast<uint64_t>(seed_override);
      std::string dir = !gen_out.empty() ? gen_out
                        : !cfg.data.root.empty()
                            ? cfg.data.root
                            : (fs::path(workdir) / "synthetic").string();
      generate_synthetic(cfg.data.spec, dir);
      std::cout << "wrote dataset to " << dir << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
