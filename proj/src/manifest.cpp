#include "mmsam/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "json.hpp"
#include "mmsam/error.hpp"

namespace mmsam {

void SplitManifest::validate() const {
  if (version != 1) throw DataError("unsupported split manifest version " + std::to_string(version));
  std::set<std::string> seen;
  for (const auto* list : {&easy, &hard})
    for (const auto& id : *list)
      if (!seen.insert(id).second) throw DataError("split manifest lists id '" + id + "' more than once");
}

bool SplitManifest::is_easy(const std::string& id) const {
  return std::find(easy.begin(), easy.end(), id) != easy.end();
}

bool SplitManifest::is_hard(const std::string& id) const {
  return std::find(hard.begin(), hard.end(), id) != hard.end();
}

SplitManifest SplitManifest::read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open split manifest " + path);
  SplitManifest m;
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    for (const auto& [key, value] : j.items())
      if (key != "version" && key != "easy" && key != "hard")
        throw DataError("split manifest " + path + ": unknown key '" + key + "'");
    m.version = j.at("version").get<int>();
    m.easy = j.at("easy").get<std::vector<std::string>>();
    m.hard = j.at("hard").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("split manifest " + path + ": " + e.what());
  }
  m.validate();
  return m;
}

void SplitManifest::write(const std::string& path) const {
  validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write split manifest " + path);
  out << nlohmann::json{{"version", version}, {"easy", easy}, {"hard", hard}}.dump(2) << "\n";
}

}  // namespace mmsam
