#include "mmsam/trace.hpp"

namespace mmsam {

namespace {
thread_local ShapeTrace* g_trace = nullptr;
}

const Shape* ShapeTrace::find(std::string_view name) const {
  for (const auto& [n, s] : entries)
    if (n == name) return &s;
  return nullptr;
}

std::vector<std::string> ShapeTrace::names() const {
  std::vector<std::string> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.first);
  return out;
}

TraceScope::TraceScope(ShapeTrace& trace) : previous_(g_trace) { g_trace = &trace; }
TraceScope::~TraceScope() { g_trace = previous_; }

void trace(std::string_view name, const Var& value) {
  if (g_trace) g_trace->entries.emplace_back(std::string(name), value.shape());
}

bool tracing() noexcept { return g_trace != nullptr; }

}  // namespace mmsam
