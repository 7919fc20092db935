#include "gslosh/log.hpp"

#include <atomic>
#include <cstdio>
#include <string>

namespace gslosh {

namespace {
std::atomic<bool> g_enabled{true};
std::atomic<std::size_t> g_count{0};
}  // namespace

void log_warning(std::string_view message) {
  ++g_count;
  if (g_enabled) std::fprintf(stderr, "gslosh warning: %.*s\n", static_cast<int>(message.size()), message.data());
}

void set_warnings_enabled(bool enabled) { g_enabled = enabled; }
bool warnings_enabled() { return g_enabled; }
std::size_t warning_count() { return g_count; }

}  // namespace gslosh
