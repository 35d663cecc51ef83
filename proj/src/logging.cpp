#include "bfusion/logging.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

namespace bfusion {

namespace {

LogLevel level_from_env() {
    const char* raw = std::getenv("FUSION_LOG");
    if (raw == nullptr) {
        return LogLevel::Error;
    }
    const std::string value(raw);
    if (value == "debug") {
        return LogLevel::Debug;
    }
    if (value == "info") {
        return LogLevel::Info;
    }
    return LogLevel::Error;
}

std::atomic<int>& threshold_slot() {
    static std::atomic<int> slot{static_cast<int>(level_from_env())};
    return slot;
}

const char* label(LogLevel level) {
    switch (level) {
    case LogLevel::Error:
        return "error";
    case LogLevel::Info:
        return "info";
    case LogLevel::Debug:
        return "debug";
    }
    return "?";
}

} // namespace

LogLevel log_threshold() { return static_cast<LogLevel>(threshold_slot().load()); }

void set_log_threshold(LogLevel level) { threshold_slot().store(static_cast<int>(level)); }

void log_message(LogLevel level, std::string_view message) {
    if (static_cast<int>(level) > threshold_slot().load()) {
        return;
    }
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    std::cerr << "[bfusion " << label(level) << "] " << message << '\n';
}

} // namespace bfusion
