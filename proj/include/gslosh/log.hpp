#pragma once

#include <cstddef>
#include <string_view>

namespace gslosh {

/// Warnings go to stderr unless silenced; the count is kept either way.
void log_warning(std::string_view message);
void set_warnings_enabled(bool enabled);
bool warnings_enabled();
std::size_t warning_count();

}  // namespace gslosh
