#pragma once

#include <string>
#include <vector>

namespace mmsam {

/// Partition of sample ids into RGB-easy and RGB-hard.
struct SplitManifest {
  int version = 1;
  std::vector<std::string> easy;
  std::vector<std::string> hard;

  /// Throws DataError on duplicate ids or a non-empty easy/hard overlap.
  void validate() const;
  bool is_easy(const std::string& id) const;
  bool is_hard(const std::string& id) const;

  static SplitManifest read(const std::string& path);
  void write(const std::string& path) const;
};

}  // namespace mmsam
