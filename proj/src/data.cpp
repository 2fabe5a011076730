#include "ps/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace ps {

namespace {

void write_pnm(const std::string& path, const ImageU8& img, bool color) {
  PS_CHECK(img.channels == (color ? 3 : 1), "image channel count mismatch for format");
  std::ofstream out(path, std::ios::binary);
  PS_CHECK(out.good(), "cannot write " << path);
  out << (color ? "P6" : "P5") << "\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  PS_CHECK(out.good(), "short write to " << path);
}

ImageU8 read_pnm(const std::string& path, bool color) {
  std::ifstream in(path, std::ios::binary);
  PS_CHECK(in.good(), "cannot read " << path);
  std::string magic;
  in >> magic;
  PS_CHECK(magic == (color ? "P6" : "P5"), path << ": expected " << (color ? "P6" : "P5")
                                                << ", got " << magic);
  auto next_int = [&]() {
    // skip whitespace and '#' comment lines
    int c = in.get();
    while (c == ' ' || c == '\n' || c == '\t' || c == '\r' || c == '#') {
      if (c == '#')
        while (c != '\n' && c != EOF) c = in.get();
      c = in.get();
    }
    int64_t v = 0;
    bool any = false;
    while (c >= '0' && c <= '9') {
      v = v * 10 + (c - '0');
      any = true;
      c = in.get();
    }
    PS_CHECK(any, path << ": malformed header");
    return v;
  };
  ImageU8 img;
  img.width = next_int();
  img.height = next_int();
  int64_t maxval = next_int();
  PS_CHECK(maxval == 255, path << ": only 8-bit images supported");
  img.channels = color ? 3 : 1;
  img.pixels.resize(static_cast<size_t>(img.width * img.height * img.channels));
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  PS_CHECK(in.gcount() == static_cast<std::streamsize>(img.pixels.size()),
           path << ": truncated pixel data");
  return img;
}

struct Rgb {
  uint8_t r, g, b;
};

// background + up to 7 saturated shape colors, cycled by class id
Rgb class_color(int64_t cls) {
  static const Rgb palette[] = {
      {40, 40, 40},   {220, 60, 60},  {60, 200, 60},  {70, 90, 230},
      {230, 200, 50}, {200, 70, 210}, {60, 210, 210}, {240, 140, 40},
  };
  return palette[static_cast<size_t>(cls % 8)];
}

}  // namespace

void write_ppm(const std::string& path, const ImageU8& img) { write_pnm(path, img, true); }
void write_pgm(const std::string& path, const ImageU8& img) { write_pnm(path, img, false); }
ImageU8 read_ppm(const std::string& path) { return read_pnm(path, true); }
ImageU8 read_pgm(const std::string& path) { return read_pnm(path, false); }

void generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir) {
  PS_CHECK(spec.num_classes >= 2, "synthetic: need at least background + 1 class");
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "labels");
  std::ofstream manifest(fs::path(out_dir) / "manifest.txt");
  PS_CHECK(manifest.good(), "cannot write manifest in " << out_dir);

  int64_t n = spec.image_size;
  int64_t total = spec.num_train + spec.num_val;
  for (int64_t idx = 0; idx < total; ++idx) {
    Rng rng(spec.seed ^ static_cast<uint64_t>(idx));
    std::vector<int64_t> label(static_cast<size_t>(n * n), 0);
    int64_t shapes = rng.uniform_int(spec.shapes_min, spec.shapes_max);
    for (int64_t s = 0; s < shapes; ++s) {
      int64_t cls = rng.uniform_int(1, spec.num_classes - 1);
      int kind = static_cast<int>(rng.uniform_int(0, 2));
      double cx = rng.uniform(0.15 * n, 0.85 * n);
      double cy = rng.uniform(0.15 * n, 0.85 * n);
      double r = rng.uniform(0.12 * n, 0.28 * n);
      if (kind == 0) {  // axis-aligned rect
        double w = r, h = rng.uniform(0.12 * n, 0.28 * n);
        for (int64_t y = 0; y < n; ++y)
          for (int64_t x = 0; x < n; ++x)
            if (std::abs(x - cx) <= w && std::abs(y - cy) <= h)
              label[static_cast<size_t>(y * n + x)] = cls;
      } else if (kind == 1) {  // disc
        for (int64_t y = 0; y < n; ++y)
          for (int64_t x = 0; x < n; ++x)
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r)
              label[static_cast<size_t>(y * n + x)] = cls;
      } else {  // triangle from three well-separated angles
        double a0 = rng.uniform(0, 2 * M_PI);
        double px[3], py[3];
        for (int v = 0; v < 3; ++v) {
          double a = a0 + 2.0 * M_PI * v / 3.0 + rng.uniform(-0.4, 0.4);
          px[v] = cx + r * std::cos(a);
          py[v] = cy + r * std::sin(a);
        }
        auto edge = [&](double x, double y, int i, int j) {
          return (px[j] - px[i]) * (y - py[i]) - (py[j] - py[i]) * (x - px[i]);
        };
        for (int64_t y = 0; y < n; ++y)
          for (int64_t x = 0; x < n; ++x) {
            double e0 = edge(x, y, 0, 1), e1 = edge(x, y, 1, 2), e2 = edge(x, y, 2, 0);
            bool inside = (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
            if (inside) label[static_cast<size_t>(y * n + x)] = cls;
          }
      }
    }

    ImageU8 img;
    img.width = img.height = n;
    img.channels = 3;
    img.pixels.resize(static_cast<size_t>(n * n * 3));
    for (int64_t i = 0; i < n * n; ++i) {
      Rgb c = class_color(label[static_cast<size_t>(i)]);
      double v[3] = {static_cast<double>(c.r), static_cast<double>(c.g),
                     static_cast<double>(c.b)};
      for (int ch = 0; ch < 3; ++ch) {
        double noisy = v[ch] + rng.normal(0.0, spec.noise_sigma);
        img.pixels[static_cast<size_t>(i * 3 + ch)] =
            static_cast<uint8_t>(std::clamp(noisy, 0.0, 255.0));
      }
    }
    ImageU8 lab;
    lab.width = lab.height = n;
    lab.channels = 1;
    lab.pixels.resize(static_cast<size_t>(n * n));
    for (int64_t i = 0; i < n * n; ++i)
      lab.pixels[static_cast<size_t>(i)] = static_cast<uint8_t>(label[static_cast<size_t>(i)]);

    std::ostringstream iname, lname;
    iname << "images/img_" << std::setw(5) << std::setfill('0') << idx << ".ppm";
    lname << "labels/lab_" << std::setw(5) << std::setfill('0') << idx << ".pgm";
    write_ppm((fs::path(out_dir) / iname.str()).string(), img);
    write_pgm((fs::path(out_dir) / lname.str()).string(), lab);
    manifest << iname.str() << " " << lname.str() << " "
             << (idx < spec.num_train ? "train" : "val") << "\n";
  }
  std::ofstream meta(fs::path(out_dir) / "dataset.txt");
  meta << "image_size = " << n << "\nnum_classes = " << spec.num_classes << "\n";
}

Tensor image_to_tensor(const ImageU8& img) {
  PS_CHECK(img.channels == 3, "image_to_tensor: expected RGB");
  int64_t h = img.height, w = img.width;
  Tensor t = Tensor::empty({1, 3, h, w});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < h * w; ++i) {
      double v = static_cast<double>(img.pixels[static_cast<size_t>(i * 3 + c)]) / 255.0;
      t.impl()->value.set(c * h * w + i, v * 2.0 - 1.0);
    }
  return t;
}

SegDataset load_dataset(const std::string& dir) {
  SegDataset ds;
  std::ifstream meta(fs::path(dir) / "dataset.txt");
  PS_CHECK(meta.good(), "missing dataset.txt in " << dir);
  std::string key, eq;
  while (meta >> key >> eq) {
    int64_t v;
    meta >> v;
    if (key == "image_size") ds.image_size = v;
    if (key == "num_classes") ds.num_classes = v;
  }
  std::ifstream manifest(fs::path(dir) / "manifest.txt");
  PS_CHECK(manifest.good(), "missing manifest.txt in " << dir);
  std::string img_rel, lab_rel, split;
  while (manifest >> img_rel >> lab_rel >> split) {
    ImageU8 img = read_ppm((fs::path(dir) / img_rel).string());
    ImageU8 lab = read_pgm((fs::path(dir) / lab_rel).string());
    PS_CHECK(img.width == lab.width && img.height == lab.height,
             "image/label size mismatch for " << img_rel);
    std::vector<int64_t> labels(lab.pixels.begin(), lab.pixels.end());
    if (split == "train") {
      ds.train_images.push_back(image_to_tensor(img));
      ds.train_labels.push_back(std::move(labels));
    } else {
      ds.val_images.push_back(image_to_tensor(img));
      ds.val_labels.push_back(std::move(labels));
    }
  }
  PS_CHECK(!ds.train_images.empty() || !ds.val_images.empty(), "empty dataset in " << dir);
  return ds;
}

std::vector<int64_t> downsample_labels(const std::vector<int64_t>& labels,
                                       int64_t full_size, int64_t out_size) {
  PS_CHECK(full_size % out_size == 0, "label downsample: sizes not divisible");
  int64_t f = full_size / out_size;
  std::vector<int64_t> out(static_cast<size_t>(out_size * out_size));
  for (int64_t y = 0; y < out_size; ++y)
    for (int64_t x = 0; x < out_size; ++x)
      out[static_cast<size_t>(y * out_size + x)] =
          labels[static_cast<size_t>((y * f + f / 2) * full_size + x * f + f / 2)];
  return out;
}

GTSegmentation labels_to_gt(const std::vector<int64_t>& labels, int64_t full_size,
                            int64_t mask_size) {
  std::vector<int64_t> small = downsample_labels(labels, full_size, mask_size);
  std::vector<int64_t> present;
  for (int64_t v : small)
    if (v != 255 && std::find(present.begin(), present.end(), v) == present.end())
      present.push_back(v);
  std::sort(present.begin(), present.end());
  GTSegmentation gt;
  for (int64_t cls : present) {
    Tensor mask = Tensor::zeros({mask_size, mask_size});
    for (int64_t i = 0; i < mask_size * mask_size; ++i)
      if (small[static_cast<size_t>(i)] == cls) mask.impl()->value.set(i, 1.0);
    gt.push_back({cls, mask});
  }
  return gt;
}

ImageU8 feature_map_to_image(const Tensor& feature) {
  Tensor f = feature;
  PS_CHECK(f.ndim() == 3 || (f.ndim() == 4 && f.dim(0) == 1),
           "feature dump: expected [C,h,w] or [1,C,h,w]");
  int64_t C = f.dim(-3), h = f.dim(-2), w = f.dim(-1);
  std::vector<double> mean(static_cast<size_t>(h * w), 0.0);
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < h * w; ++i)
      mean[static_cast<size_t>(i)] += f.impl()->value.get(c * h * w + i);
  double lo = mean[0], hi = mean[0];
  for (double v : mean) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  ImageU8 img;
  img.width = w;
  img.height = h;
  img.channels = 1;
  img.pixels.resize(static_cast<size_t>(h * w));
  double range = hi - lo;
  for (int64_t i = 0; i < h * w; ++i) {
    // degenerate (constant) maps render mid-gray
    double v = range > 1e-12 ? (mean[static_cast<size_t>(i)] - lo) / range * 255.0 : 128.0;
    img.pixels[static_cast<size_t>(i)] = static_cast<uint8_t>(std::lround(v));
  }
  return img;
}

}  // namespace ps
