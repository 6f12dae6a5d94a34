#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmsam/tensor.hpp"

namespace mmsam {

/// Integer label raster.
struct LabelMap {
  int64_t height = 0, width = 0;
  std::vector<int32_t> data;

  LabelMap() = default;
  LabelMap(int64_t h, int64_t w, int32_t fill = 0) : height(h), width(w), data(static_cast<size_t>(h * w), fill) {}
  int32_t& at(int64_t y, int64_t x) { return data[static_cast<size_t>(y * width + x)]; }
  int32_t at(int64_t y, int64_t x) const { return data[static_cast<size_t>(y * width + x)]; }
};

/// Pixel-aligned sample. rgb holds raw 0..255 values (H, W, 3); aux holds
/// raw raster values (H, W, 1 or 3) in its file's range; normalization
/// happens at model input.
struct SampleRecord {
  std::string id;
  Tensor rgb;
  Tensor aux;
  LabelMap label;
  std::string condition;

  int64_t height() const { return label.height; }
  int64_t width() const { return label.width; }
};

struct DatasetInfo {
  int64_t num_classes = 0;
  int64_t ignore_index = 255;
  std::vector<std::string> class_names;
  std::string aux_kind = "aux";
};

/// Raster read from or written to a PNG file.
struct Image {
  int64_t height = 0, width = 0, channels = 0;
  int bit_depth = 8;
  std::vector<uint16_t> pixels;
};

Image read_png(const std::string& path);
/// 8- or 16-bit gray, RGB; pixel values must fit the bit depth.
void write_png(const std::string& path, const Image& image);

DatasetInfo read_dataset_info(const std::string& root);
void write_dataset_info(const std::string& root, const DatasetInfo& info);

/// Ids of one split, listed eagerly; pixels load on demand.
class Dataset {
 public:
  Dataset(std::string root, std::string split);

  const DatasetInfo& info() const { return info_; }
  const std::string& split() const { return split_; }
  const std::vector<std::string>& ids() const { return ids_; }
  size_t size() const { return ids_.size(); }
  SampleRecord load(size_t index) const;
  SampleRecord load(const std::string& id) const;
  std::string split_dir() const;

 private:
  std::string root_, split_;
  DatasetInfo info_;
  std::vector<std::string> ids_;
  std::vector<std::string> conditions_;
};

Dataset load_dataset(const std::string& root, const std::string& split);

/// Writes rgb/aux/label files of `sample` into root/<split>/.
void write_sample(const std::string& root, const std::string& split, const SampleRecord& sample, int aux_bit_depth = 8);

struct SynthSpec {
  int64_t n = 200;
  int64_t size = 64;
  int64_t num_classes = 4;
  double hard_fraction = 0.2;
  uint64_t seed = 0;
  /// Upper bound on mean RGB value (0..255) of darkened samples.
  double darkness_budget = 8.0;

  void validate() const;
};

struct SynthSplitReport {
  std::string split;
  int64_t count = 0;
  std::vector<std::string> hard_ids;
  /// Pixel accuracy of the aux-intensity majority classifier on hard samples.
  double aux_oracle_accuracy = 0.0;
};

/// Generates train (n), val (max(1, n/4)) and test (n) splits under
/// out_root with dataset.json and a per-split manifest.json.
std::vector<SynthSplitReport> generate_synthetic(const SynthSpec& spec, const std::string& out_root);

/// Renders one synthetic sample; exposed for tests.
SampleRecord render_synthetic(const SynthSpec& spec, uint64_t sample_seed, bool hard, const std::string& id);

}  // namespace mmsam
