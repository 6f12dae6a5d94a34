#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mmsam/autograd.hpp"

namespace mmsam {

/// Ordered record of named intermediates seen during a forward pass.
struct ShapeTrace {
  std::vector<std::pair<std::string, Shape>> entries;

  const Shape* find(std::string_view name) const;
  std::vector<std::string> names() const;
};

/// Installs `trace` as the active recorder for the current thread.
class TraceScope {
 public:
  explicit TraceScope(ShapeTrace& trace);
  ~TraceScope();
  TraceScope(const TraceScope&) = delete;
  TraceScope& operator=(const TraceScope&) = delete;

 private:
  ShapeTrace* previous_;
};

/// Records `value` under `name` when a TraceScope is active.
void trace(std::string_view name, const Var& value);
bool tracing() noexcept;

}  // namespace mmsam
