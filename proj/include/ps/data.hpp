#pragma once

#include "ps/config.hpp"
#include "ps/loss.hpp"

namespace ps {

// --- minimal binary PPM (P6) / PGM (P5) codecs, 8-bit ---
struct ImageU8 {
  int64_t width = 0, height = 0, channels = 0;  // channels 1 or 3
  std::vector<uint8_t> pixels;                  // row-major, interleaved
};

void write_ppm(const std::string& path, const ImageU8& img);
void write_pgm(const std::string& path, const ImageU8& img);
ImageU8 read_ppm(const std::string& path);
ImageU8 read_pgm(const std::string& path);

// Rasterizes rect/disc/triangle shapes over a background; labels carry class
// ids, later shapes win overlaps. Writes images/, labels/ and manifest.txt.
void generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir);

struct SegDataset {
  std::vector<Tensor> train_images;                // each [1,3,H,W], normalized
  std::vector<std::vector<int64_t>> train_labels;  // full-resolution class ids
  std::vector<Tensor> val_images;
  std::vector<std::vector<int64_t>> val_labels;
  int64_t image_size = 0;
  int64_t num_classes = 0;
};

// Loads image/label pairs per the manifest's split column.
SegDataset load_dataset(const std::string& dir);

// image bytes -> normalized float tensor [1,3,H,W]
Tensor image_to_tensor(const ImageU8& img);

// Nearest-neighbor downsample of labels to the mask grid, then one binary
// mask per class present (background included).
GTSegmentation labels_to_gt(const std::vector<int64_t>& labels, int64_t full_size,
                            int64_t mask_size);
// For the per-pixel variants: plain nearest downsample.
std::vector<int64_t> downsample_labels(const std::vector<int64_t>& labels,
                                       int64_t full_size, int64_t out_size);

// Channel-mean, min-max normalized grayscale dump; constant maps become 128.
ImageU8 feature_map_to_image(const Tensor& feature);  // [1,C,h,w] or [C,h,w]

}  // namespace ps
