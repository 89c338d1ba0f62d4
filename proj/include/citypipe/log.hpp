#pragma once

#include <string_view>

#include "json.hpp"

namespace citypipe::logging {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

void set_verbosity(Level level);
Level verbosity();

// One JSON object per line on stderr: {"level":..,"event":..,  ...fields}.
void emit(Level level, std::string_view event, nlohmann::json fields = nlohmann::json::object());

inline void error(std::string_view event, nlohmann::json f = nlohmann::json::object()) {
  emit(Level::error, event, std::move(f));
}
inline void warn(std::string_view event, nlohmann::json f = nlohmann::json::object()) {
  emit(Level::warn, event, std::move(f));
}
inline void info(std::string_view event, nlohmann::json f = nlohmann::json::object()) {
  emit(Level::info, event, std::move(f));
}
inline void debug(std::string_view event, nlohmann::json f = nlohmann::json::object()) {
  emit(Level::debug, event, std::move(f));
}

}  // namespace citypipe::logging
