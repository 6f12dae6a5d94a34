#include "mmsam/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "mmsam/error.hpp"

namespace mmsam {

namespace {

constexpr char kMagic[8] = {'M', 'M', 'S', 'A', 'M', 'A', 'R', 'C'};
constexpr uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "archive IO assumes a little-endian host");

const char* dtype_name(ArrayDtype d) { return d == ArrayDtype::f32 ? "f32" : "f64"; }

uint32_t crc_of(const std::vector<char>& bytes) {
  return static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::vector<char> encode(const Tensor& t, ArrayDtype dtype) {
  std::vector<char> bytes;
  if (dtype == ArrayDtype::f64) {
    bytes.resize(sizeof(double) * static_cast<size_t>(t.numel()));
    std::memcpy(bytes.data(), t.ptr(), bytes.size());
  } else {
    bytes.resize(sizeof(float) * static_cast<size_t>(t.numel()));
    for (int64_t i = 0; i < t.numel(); ++i) {
      const float f = static_cast<float>(t[i]);
      std::memcpy(bytes.data() + i * sizeof(float), &f, sizeof(float));
    }
  }
  return bytes;
}

}  // namespace

void Archive::put(const std::string& name, const Tensor& value, ArrayDtype dtype) {
  if (value.is_meta()) throw ArgumentError("cannot archive meta tensor '" + name + "'");
  arrays[name] = value;
  dtypes[name] = dtype;
}

const Tensor& Archive::at(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw LoadError("archive has no array named '" + name + "'");
  return it->second;
}

void write_archive(const Archive& archive, const std::string& path) {
  nlohmann::json manifest;
  manifest["arrays"] = nlohmann::json::array();
  manifest["metadata"] = archive.metadata;
  std::vector<std::vector<char>> payloads;
  uint64_t offset = 0;
  for (const auto& [name, tensor] : archive.arrays) {
    auto dit = archive.dtypes.find(name);
    const ArrayDtype dtype = dit == archive.dtypes.end() ? ArrayDtype::f32 : dit->second;
    payloads.push_back(encode(tensor, dtype));
    const auto& bytes = payloads.back();
    manifest["arrays"].push_back({{"name", name},
                                  {"shape", tensor.shape()},
                                  {"dtype", dtype_name(dtype)},
                                  {"offset", offset},
                                  {"nbytes", bytes.size()},
                                  {"crc32", crc_of(bytes)}});
    offset += bytes.size();
  }
  const std::string header = manifest.dump();

  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    const uint64_t header_len = header.size();
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& bytes : payloads) out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write to '" + tmp + "' failed");
  }
  std::filesystem::rename(tmp, target);
}

Archive read_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open archive '" + path + "'");
  std::vector<char> file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const size_t prefix = sizeof(kMagic) + sizeof(uint32_t) + sizeof(uint64_t);
  if (file.size() < prefix || std::memcmp(file.data(), kMagic, sizeof(kMagic)) != 0)
    throw LoadError("'" + path + "' is not an archive (bad magic)");
  uint32_t version = 0;
  uint64_t header_len = 0;
  std::memcpy(&version, file.data() + sizeof(kMagic), sizeof(version));
  std::memcpy(&header_len, file.data() + sizeof(kMagic) + sizeof(version), sizeof(header_len));
  if (version != kVersion) throw LoadError("unsupported archive version " + std::to_string(version));
  if (header_len > file.size() - prefix) throw LoadError("archive manifest is truncated");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(file.begin() + static_cast<std::ptrdiff_t>(prefix),
                                     file.begin() + static_cast<std::ptrdiff_t>(prefix + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("archive manifest is corrupt: ") + e.what());
  }
  const size_t payload_start = prefix + header_len;
  const size_t payload_size = file.size() - payload_start;

  Archive archive;
  try {
    if (manifest.contains("metadata")) archive.metadata = manifest.at("metadata");
    for (const auto& entry : manifest.at("arrays")) {
      const std::string name = entry.at("name").get<std::string>();
      const Shape shape = entry.at("shape").get<Shape>();
      const std::string dtype = entry.at("dtype").get<std::string>();
      const uint64_t offset = entry.at("offset").get<uint64_t>();
      const uint64_t nbytes = entry.at("nbytes").get<uint64_t>();
      const uint32_t crc = entry.at("crc32").get<uint32_t>();
      if (dtype != "f32" && dtype != "f64") throw LoadError("array '" + name + "' has unknown dtype " + dtype);
      const size_t width = dtype == "f32" ? sizeof(float) : sizeof(double);
      for (int64_t d : shape)
        if (d < 0) throw LoadError("array '" + name + "' has a negative dimension");
      if (nbytes != width * static_cast<uint64_t>(numel(shape)))
        throw LoadError("array '" + name + "' size does not match its shape");
      if (offset > payload_size || nbytes > payload_size - offset)
        throw LoadError("array '" + name + "' extends past the end of the archive");
      std::vector<char> bytes(file.begin() + static_cast<std::ptrdiff_t>(payload_start + offset),
                              file.begin() + static_cast<std::ptrdiff_t>(payload_start + offset + nbytes));
      if (crc_of(bytes) != crc) throw LoadError("array '" + name + "' failed its checksum");
      Tensor t(shape);
      for (int64_t i = 0; i < t.numel(); ++i) {
        if (width == sizeof(float)) {
          float f;
          std::memcpy(&f, bytes.data() + i * sizeof(float), sizeof(float));
          t[i] = f;
        } else {
          std::memcpy(&t[i], bytes.data() + i * sizeof(double), sizeof(double));
        }
      }
      archive.arrays[name] = std::move(t);
      archive.dtypes[name] = width == sizeof(float) ? ArrayDtype::f32 : ArrayDtype::f64;
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("archive manifest is malformed: ") + e.what());
  }
  return archive;
}

void export_module(const Module& module, Archive& archive, const std::string& prefix, ArrayDtype dtype) {
  for (const auto& p : module.named_parameters(prefix)) archive.put(p.name, p.var->value(), dtype);
  for (const auto& b : module.named_buffers(prefix)) archive.put(b.name, *b.tensor, dtype);
}

LoadReport import_module(Module& module, const Archive& archive, const std::string& prefix, bool require_all) {
  LoadReport report;
  std::vector<std::pair<Tensor*, const Tensor*>> assignments;
  std::set<std::string> used;
  auto visit = [&](const std::string& name, Tensor& slot) {
    auto it = archive.arrays.find(name);
    if (it == archive.arrays.end()) {
      report.missing.push_back(name);
      return;
    }
    if (it->second.shape() != slot.shape())
      throw LoadError("shape mismatch for '" + name + "': archive " + to_string(it->second.shape()) + ", model " +
                      to_string(slot.shape()));
    assignments.emplace_back(&slot, &it->second);
    report.matched.push_back(name);
    used.insert(name);
  };
  for (const auto& p : module.named_parameters(prefix)) visit(p.name, p.var->mutable_value());
  for (const auto& b : module.named_buffers(prefix)) visit(b.name, *b.tensor);
  if (require_all && !report.missing.empty())
    throw LoadError("archive is missing " + std::to_string(report.missing.size()) + " required arrays, first '" +
                    report.missing.front() + "'");
  const std::string scope = prefix.empty() ? "" : prefix + ".";
  for (const auto& [name, t] : archive.arrays)
    if (!used.count(name) && name.rfind(scope, 0) == 0) report.unmatched.push_back(name);
  for (auto& [slot, src] : assignments) *slot = *src;
  return report;
}

}  // namespace mmsam
