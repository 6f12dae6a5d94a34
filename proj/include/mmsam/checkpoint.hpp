#pragma once

// Named-array archive:
//
//   "MMSAMARC" | u32 version | u64 manifest bytes | manifest JSON | payload
//
// The manifest lists {name, shape, dtype ("f32" | "f64"), offset, nbytes,
// crc32} per array plus a free-form "metadata" object. All payload numbers
// are little-endian. Reading validates everything before returning, so a
// failed read never exposes partial data.

#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmsam/nn.hpp"
#include "mmsam/tensor.hpp"

namespace mmsam {

enum class ArrayDtype { f32, f64 };

struct Archive {
  std::map<std::string, Tensor> arrays;
  std::map<std::string, ArrayDtype> dtypes;
  nlohmann::json metadata = nlohmann::json::object();

  void put(const std::string& name, const Tensor& value, ArrayDtype dtype = ArrayDtype::f32);
  bool contains(const std::string& name) const { return arrays.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
};

/// Writes through a temporary file and renames it into place.
void write_archive(const Archive& archive, const std::string& path);
Archive read_archive(const std::string& path);

struct LoadReport {
  std::vector<std::string> matched;
  /// Archive arrays with no counterpart in the module.
  std::vector<std::string> unmatched;
  /// Module tensors absent from the archive.
  std::vector<std::string> missing;
  std::vector<std::string> resized;
};

/// Copies every parameter and buffer of `module` (named with `prefix`).
void export_module(const Module& module, Archive& archive, const std::string& prefix = "",
                   ArrayDtype dtype = ArrayDtype::f32);

/// Assigns archive arrays to the module's parameters and buffers by name.
/// Throws LoadError on a shape mismatch, or on missing arrays when
/// `require_all`; on error the module is untouched.
LoadReport import_module(Module& module, const Archive& archive, const std::string& prefix = "",
                         bool require_all = true);

}  // namespace mmsam
