#include "idkl/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>

namespace idkl::log {
namespace {

Level from_env() {
    const char* env = std::getenv("IDKL_LOG");
    if (env == nullptr || *env == '\0') return Level::info;
    try {
        return parse_level(env);
    } catch (const std::invalid_argument&) {
        std::cerr << "[warn] ignoring unknown IDKL_LOG value '" << env << "'\n";
        return Level::info;
    }
}

std::atomic<int>& current() {
    static std::atomic<int> l{static_cast<int>(from_env())};
    return l;
}

const char* tag(Level l) {
    switch (l) {
        case Level::error: return "error";
        case Level::warn: return "warn";
        case Level::info: return "info";
        case Level::debug: return "debug";
    }
    return "?";
}

}  // namespace

Level parse_level(std::string_view name) {
    if (name == "error") return Level::error;
    if (name == "warn") return Level::warn;
    if (name == "info") return Level::info;
    if (name == "debug") return Level::debug;
    throw std::invalid_argument("unknown log level '" + std::string(name) + "'");
}

Level level() { return static_cast<Level>(current().load()); }

void set_level(Level l) { current().store(static_cast<int>(l)); }

void write(Level l, std::string_view msg) {
    if (static_cast<int>(l) > current().load()) return;
    static std::mutex mu;
    std::lock_guard lock(mu);
    std::cerr << '[' << tag(l) << "] " << msg << '\n';
}

}  // namespace idkl::log
