// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string_view>

namespace tbvad::log {

enum class Level { debug, info, warning, error, off };

void set_level(Level level);
Level level();
void write(Level level, std::string_view message);

inline void warn(std::string_view m) { write(Level::warning, m); }
inline void info(std::string_view m) { write(Level::info, m); }

} // namespace tbvad::log
