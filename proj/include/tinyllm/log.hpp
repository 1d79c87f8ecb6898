// SPDX-License-Identifier: Apache-2.0
//
// Minimal stderr logging; data and reports never go through here.

#pragma once

#include <string_view>

namespace tinyllm::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

void set_level(Level level);
Level level();

void info(std::string_view msg);
void warn(std::string_view msg);
void error(std::string_view msg);

}  // namespace tinyllm::log
