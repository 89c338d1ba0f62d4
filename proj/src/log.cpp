#include "citypipe/log.hpp"

#include <atomic>
#include <chrono>
#include <iostream>
#include <mutex>

namespace citypipe::logging {

namespace {
std::atomic<int> g_verbosity{static_cast<int>(Level::info)};
std::mutex g_mutex;

const char* level_name(Level level) {
  switch (level) {
    case Level::error: return "error";
    case Level::warn: return "warn";
    case Level::info: return "info";
    case Level::debug: return "debug";
  }
  return "info";
}
}  // namespace

void set_verbosity(Level level) { g_verbosity = static_cast<int>(level); }

Level verbosity() { return static_cast<Level>(g_verbosity.load()); }

void emit(Level level, std::string_view event, nlohmann::json fields) {
  if (static_cast<int>(level) > g_verbosity.load()) {
    return;
  }
  nlohmann::json line;
  line["level"] = level_name(level);
  line["event"] = std::string(event);
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  line["ts_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
  if (fields.is_object()) {
    for (auto& [k, v] : fields.items()) {
      line[k] = v;
    }
  }
  std::lock_guard<std::mutex> lock(g_mutex);
  std::cerr << line.dump() << "\n";
}

}  // namespace citypipe::logging
