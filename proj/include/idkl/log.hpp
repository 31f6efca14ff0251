#pragma once

#include <string_view>

// Stderr logging. Verbosity comes from IDKL_LOG (error, warn, info, debug);
// the default is info.
namespace idkl::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

Level level();
void set_level(Level l);
/// Throws std::invalid_argument for an unknown name.
Level parse_level(std::string_view name);

void write(Level l, std::string_view msg);
inline void error(std::string_view msg) { write(Level::error, msg); }
inline void warn(std::string_view msg) { write(Level::warn, msg); }
inline void info(std::string_view msg) { write(Level::info, msg); }
inline void debug(std::string_view msg) { write(Level::debug, msg); }

}  // namespace idkl::log
