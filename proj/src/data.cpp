#include "mmsam/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include "json.hpp"
#include "mmsam/error.hpp"
#include "mmsam/manifest.hpp"

namespace fs = std::filesystem;

namespace mmsam {

Image read_png(const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw IoError("cannot read PNG " + path + ": " + img.message);
  const bool wide = (img.format & PNG_FORMAT_FLAG_LINEAR) != 0;
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  if (wide)
    img.format = color ? PNG_FORMAT_LINEAR_RGB : PNG_FORMAT_LINEAR_Y;
  else
    img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image out;
  out.height = img.height;
  out.width = img.width;
  out.channels = color ? 3 : 1;
  out.bit_depth = wide ? 16 : 8;
  const size_t count = static_cast<size_t>(out.height * out.width * out.channels);
  out.pixels.resize(count);
  bool ok;
  if (wide) {
    ok = png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr);
  } else {
    std::vector<uint8_t> buf(count);
    ok = png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr);
    std::copy(buf.begin(), buf.end(), out.pixels.begin());
  }
  if (!ok) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path + ": " + msg);
  }
  return out;
}

void write_png(const std::string& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw ArgumentError("PNG writer supports 1 or 3 channels");
  if (image.bit_depth != 8 && image.bit_depth != 16) throw ArgumentError("PNG writer supports 8 or 16 bits");
  if (image.pixels.size() != static_cast<size_t>(image.height * image.width * image.channels))
    throw ArgumentError("PNG pixel buffer size does not match its dimensions");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  bool ok;
  if (image.bit_depth == 16) {
    img.format = image.channels == 3 ? PNG_FORMAT_LINEAR_RGB : PNG_FORMAT_LINEAR_Y;
    ok = png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr);
  } else {
    img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<uint8_t> buf(image.pixels.size());
    for (size_t i = 0; i < buf.size(); ++i) {
      if (image.pixels[i] > 255) throw ArgumentError("8-bit PNG value out of range");
      buf[i] = static_cast<uint8_t>(image.pixels[i]);
    }
    ok = png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr);
  }
  if (!ok) throw IoError("cannot write PNG " + path + ": " + img.message);
}

DatasetInfo read_dataset_info(const std::string& root) {
  const std::string path = (fs::path(root) / "dataset.json").string();
  std::ifstream in(path);
  if (!in) throw DataError("dataset descriptor missing: " + path);
  DatasetInfo info;
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    info.num_classes = j.at("num_classes").get<int64_t>();
    info.ignore_index = j.value("ignore_index", int64_t{255});
    info.class_names = j.value("class_names", std::vector<std::string>{});
    info.aux_kind = j.value("aux_kind", std::string("aux"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("dataset descriptor " + path + ": " + e.what());
  }
  if (info.num_classes < 2) throw DataError("dataset descriptor " + path + ": num_classes must be at least 2");
  return info;
}

void write_dataset_info(const std::string& root, const DatasetInfo& info) {
  fs::create_directories(root);
  std::ofstream out(fs::path(root) / "dataset.json");
  if (!out) throw IoError("cannot write dataset descriptor under " + root);
  out << nlohmann::json{{"num_classes", info.num_classes},
                        {"ignore_index", info.ignore_index},
                        {"class_names", info.class_names},
                        {"aux_kind", info.aux_kind}}
             .dump(2)
      << "\n";
}

namespace {

std::set<std::string> png_stems(const fs::path& dir) {
  std::set<std::string> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.insert(e.path().stem().string());
  return out;
}

}  // namespace

Dataset::Dataset(std::string root, std::string split) : root_(std::move(root)), split_(std::move(split)) {
  info_ = read_dataset_info(root_);
  const fs::path dir = split_dir();
  if (!fs::is_directory(dir)) throw DataError("split directory missing: " + dir.string());
  const auto rgb = png_stems(dir / "rgb");
  const auto aux = png_stems(dir / "aux");
  const auto label = png_stems(dir / "label");
  std::set<std::string> all = rgb;
  all.insert(aux.begin(), aux.end());
  all.insert(label.begin(), label.end());
  for (const auto& id : all) {
    for (const auto& [name, set] : {std::pair{"rgb", &rgb}, std::pair{"aux", &aux}, std::pair{"label", &label}})
      if (!set->count(id)) throw DataError("sample '" + id + "' in split '" + split_ + "' has no " + name + " file");
  }
  ids_.assign(all.begin(), all.end());
  std::map<std::string, std::string> tags;
  const fs::path cond = dir / "conditions.json";
  if (fs::exists(cond)) {
    std::ifstream in(cond);
    try {
      tags = nlohmann::json::parse(in).get<std::map<std::string, std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError("conditions file " + cond.string() + ": " + e.what());
    }
  }
  for (const auto& id : ids_) conditions_.push_back(tags.count(id) ? tags[id] : "");
}

std::string Dataset::split_dir() const { return (fs::path(root_) / split_).string(); }

SampleRecord Dataset::load(const std::string& id) const {
  const auto it = std::find(ids_.begin(), ids_.end(), id);
  if (it == ids_.end()) throw DataError("sample '" + id + "' not in split '" + split_ + "'");
  return load(static_cast<size_t>(it - ids_.begin()));
}

SampleRecord Dataset::load(size_t index) const {
  if (index >= ids_.size()) throw ArgumentError("sample index out of range");
  const std::string& id = ids_[index];
  const fs::path dir = split_dir();
  const Image rgb = read_png((dir / "rgb" / (id + ".png")).string());
  const Image aux = read_png((dir / "aux" / (id + ".png")).string());
  const Image label = read_png((dir / "label" / (id + ".png")).string());
  if (rgb.channels != 3 || rgb.bit_depth != 8) throw DataError("sample '" + id + "': rgb must be 8-bit RGB");
  if (label.channels != 1 || label.bit_depth != 8) throw DataError("sample '" + id + "': label must be 8-bit gray");
  if (rgb.height != label.height || rgb.width != label.width || aux.height != label.height ||
      aux.width != label.width)
    throw DataError("sample '" + id + "': rgb " + std::to_string(rgb.height) + "x" + std::to_string(rgb.width) +
                    ", aux " + std::to_string(aux.height) + "x" + std::to_string(aux.width) + ", label " +
                    std::to_string(label.height) + "x" + std::to_string(label.width) + " are not aligned");
  SampleRecord s;
  s.id = id;
  s.condition = conditions_[index];
  s.rgb = Tensor({rgb.height, rgb.width, 3});
  for (size_t i = 0; i < rgb.pixels.size(); ++i) s.rgb[static_cast<int64_t>(i)] = rgb.pixels[i];
  s.aux = Tensor({aux.height, aux.width, aux.channels});
  for (size_t i = 0; i < aux.pixels.size(); ++i) s.aux[static_cast<int64_t>(i)] = aux.pixels[i];
  s.label = LabelMap(label.height, label.width);
  for (size_t i = 0; i < label.pixels.size(); ++i) {
    const int32_t v = label.pixels[i];
    if (v >= info_.num_classes && v != info_.ignore_index)
      throw DataError("sample '" + id + "': label value " + std::to_string(v) + " is not a class id");
    s.label.data[i] = v;
  }
  return s;
}

Dataset load_dataset(const std::string& root, const std::string& split) { return Dataset(root, split); }

void write_sample(const std::string& root, const std::string& split, const SampleRecord& sample, int aux_bit_depth) {
  const fs::path dir = fs::path(root) / split;
  for (const char* sub : {"rgb", "aux", "label"}) fs::create_directories(dir / sub);
  const int64_t h = sample.height(), w = sample.width();
  auto to_image = [](const Tensor& t, int64_t h, int64_t w, int depth) {
    Image img;
    img.height = h;
    img.width = w;
    img.channels = t.dim(2);
    img.bit_depth = depth;
    const double hi = depth == 16 ? 65535.0 : 255.0;
    img.pixels.resize(static_cast<size_t>(t.numel()));
    for (int64_t i = 0; i < t.numel(); ++i)
      img.pixels[static_cast<size_t>(i)] = static_cast<uint16_t>(std::clamp(std::round(t[i]), 0.0, hi));
    return img;
  };
  write_png((dir / "rgb" / (sample.id + ".png")).string(), to_image(sample.rgb, h, w, 8));
  write_png((dir / "aux" / (sample.id + ".png")).string(), to_image(sample.aux, h, w, aux_bit_depth));
  Image lab;
  lab.height = h;
  lab.width = w;
  lab.channels = 1;
  lab.pixels.assign(sample.label.data.begin(), sample.label.data.end());
  write_png((dir / "label" / (sample.id + ".png")).string(), lab);
}

void SynthSpec::validate() const {
  if (n < 1) throw ArgumentError("synthetic n must be positive");
  if (size < 32 || size % 32 != 0) throw ArgumentError("synthetic size must be a positive multiple of 32");
  if (num_classes < 2 || num_classes > 255) throw ArgumentError("synthetic num_classes must be in [2, 255]");
  if (!(hard_fraction >= 0.0 && hard_fraction <= 1.0)) throw ArgumentError("hard_fraction must be in [0, 1]");
}

namespace {

uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::array<double, 3> class_color(int64_t c, int64_t num_classes) {
  // Fully saturated hue wheel over the foreground classes.
  const double hue = 6.0 * static_cast<double>(c - 1) / static_cast<double>(std::max<int64_t>(1, num_classes - 1));
  const double x = 1.0 - std::abs(std::fmod(hue, 2.0) - 1.0);
  std::array<double, 3> rgb{};
  switch (static_cast<int>(hue) % 6) {
    case 0: rgb = {1, x, 0}; break;
    case 1: rgb = {x, 1, 0}; break;
    case 2: rgb = {0, 1, x}; break;
    case 3: rgb = {0, x, 1}; break;
    case 4: rgb = {x, 0, 1}; break;
    default: rgb = {1, 0, x}; break;
  }
  for (double& v : rgb) v = 30.0 + 190.0 * v;
  return rgb;
}

double aux_level(int64_t c, int64_t num_classes) {
  return 25.0 + 200.0 * static_cast<double>(c) / static_cast<double>(num_classes - 1);
}

bool inside(int kind, double dx, double dy, double r) {
  switch (kind) {
    case 0: return dx * dx + dy * dy <= r * r;
    case 1: return std::abs(dx) <= r && std::abs(dy) <= 0.6 * r;
    default: return dy <= 0.8 * r && dy >= -r + 2.0 * std::abs(dx);
  }
}

}  // namespace

SampleRecord render_synthetic(const SynthSpec& spec, uint64_t sample_seed, bool hard, const std::string& id) {
  std::mt19937_64 rng(sample_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 6.0);
  const int64_t S = spec.size, K = spec.num_classes;
  SampleRecord s;
  s.id = id;
  s.condition = hard ? "dark" : "";
  s.label = LabelMap(S, S, 0);

  std::vector<std::array<double, 3>> colors(static_cast<size_t>(K));
  const double gray = 70.0 + 80.0 * unit(rng);
  std::array<double, 3> tint{};
  for (double& t : tint) t = -10.0 + 20.0 * unit(rng);
  colors[0] = {gray + tint[0], gray + tint[1], gray + tint[2]};
  const int shapes = 2 + static_cast<int>(unit(rng) * 3.0);
  for (int k = 0; k < shapes; ++k) {
    const int64_t c = 1 + static_cast<int64_t>(unit(rng) * static_cast<double>(K - 1));
    const int kind = static_cast<int>((c - 1) % 3);
    const double cx = S * (0.15 + 0.7 * unit(rng)), cy = S * (0.15 + 0.7 * unit(rng));
    const double r = S * (0.12 + 0.13 * unit(rng));
    for (int64_t y = 0; y < S; ++y)
      for (int64_t x = 0; x < S; ++x)
        if (inside(kind, x + 0.5 - cx, y + 0.5 - cy, r)) s.label.at(y, x) = static_cast<int32_t>(c);
  }
  for (int64_t c = 1; c < K; ++c) {
    colors[static_cast<size_t>(c)] = class_color(c, K);
    for (double& v : colors[static_cast<size_t>(c)]) v += -15.0 + 30.0 * unit(rng);
  }

  s.rgb = Tensor({S, S, 3});
  s.aux = Tensor({S, S, 1});
  for (int64_t y = 0; y < S; ++y)
    for (int64_t x = 0; x < S; ++x) {
      const int64_t c = s.label.at(y, x);
      const int64_t p = y * S + x;
      for (int k = 0; k < 3; ++k) {
        double v = colors[static_cast<size_t>(c)][static_cast<size_t>(k)] + noise(rng);
        if (hard) v = 0.02 * v + 3.0 + 0.5 * noise(rng);
        s.rgb[p * 3 + k] = std::clamp(std::round(v), 0.0, 255.0);
      }
      s.aux[p] = std::clamp(std::round(aux_level(c, K) + noise(rng)), 0.0, 255.0);
    }
  return s;
}

std::vector<SynthSplitReport> generate_synthetic(const SynthSpec& spec, const std::string& out_root) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_root, ec);
  if (ec || !fs::is_directory(out_root)) throw IoError("cannot create dataset root " + out_root);
  {
    const fs::path probe = fs::path(out_root) / ".write_probe";
    std::ofstream p(probe);
    if (!p) throw IoError("dataset root " + out_root + " is not writable");
    p.close();
    fs::remove(probe, ec);
  }
  DatasetInfo info;
  info.num_classes = spec.num_classes;
  info.ignore_index = 255;
  info.aux_kind = "synthetic_depth";
  info.class_names.push_back("background");
  const char* kinds[] = {"circle", "rectangle", "triangle"};
  for (int64_t c = 1; c < spec.num_classes; ++c)
    info.class_names.push_back(std::string(kinds[(c - 1) % 3]) + (c > 3 ? "_" + std::to_string(c) : ""));
  write_dataset_info(out_root, info);

  std::vector<SynthSplitReport> reports;
  const std::vector<std::pair<std::string, int64_t>> splits{
      {"train", spec.n}, {"val", std::max<int64_t>(1, spec.n / 4)}, {"test", spec.n}};
  for (size_t si = 0; si < splits.size(); ++si) {
    const auto& [split, count] = splits[si];
    const fs::path dir = fs::path(out_root) / split;
    fs::remove_all(dir, ec);
    std::mt19937_64 pick(mix_seed(spec.seed, 1000 + si));
    std::vector<int64_t> order(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) order[static_cast<size_t>(i)] = i;
    std::shuffle(order.begin(), order.end(), pick);
    const auto n_hard = static_cast<int64_t>(std::llround(spec.hard_fraction * static_cast<double>(count)));
    std::vector<bool> hard(static_cast<size_t>(count), false);
    for (int64_t i = 0; i < n_hard; ++i) hard[static_cast<size_t>(order[static_cast<size_t>(i)])] = true;

    SynthSplitReport report;
    report.split = split;
    report.count = count;
    SplitManifest manifest;
    nlohmann::json conditions = nlohmann::json::object();
    // counts[intensity][class] over hard samples (all samples if none).
    std::vector<std::vector<int64_t>> hist(256, std::vector<int64_t>(static_cast<size_t>(spec.num_classes), 0));
    std::vector<std::vector<int64_t>> hist_all = hist;
    for (int64_t i = 0; i < count; ++i) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%04lld", static_cast<long long>(i));
      const std::string id = buf;
      const bool is_hard = hard[static_cast<size_t>(i)];
      const SampleRecord s = render_synthetic(spec, mix_seed(spec.seed, (si + 1) * 1000003ULL + i), is_hard, id);
      write_sample(out_root, split, s);
      (is_hard ? manifest.hard : manifest.easy).push_back(id);
      if (is_hard) conditions[id] = s.condition;
      for (size_t p = 0; p < s.label.data.size(); ++p) {
        const auto v = static_cast<size_t>(s.aux[static_cast<int64_t>(p)]);
        const auto c = static_cast<size_t>(s.label.data[p]);
        hist_all[v][c]++;
        if (is_hard) hist[v][c]++;
      }
    }
    const auto& h = n_hard > 0 ? hist : hist_all;
    int64_t correct = 0, total = 0;
    for (const auto& row : h) {
      correct += *std::max_element(row.begin(), row.end());
      for (int64_t v : row) total += v;
    }
    report.aux_oracle_accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 1.0;
    report.hard_ids = manifest.hard;
    manifest.write((dir / "manifest.json").string());
    std::ofstream(dir / "conditions.json") << conditions.dump(2) << "\n";
    reports.push_back(std::move(report));
  }
  return reports;
}

}  // namespace mmsam
