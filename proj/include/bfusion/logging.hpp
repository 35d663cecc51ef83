#pragma once

#include <string_view>

namespace bfusion {

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

/// Threshold from FUSION_LOG={error|info|debug}; defaults to error.
LogLevel log_threshold();
void set_log_threshold(LogLevel level);
void log_message(LogLevel level, std::string_view message);

} // namespace bfusion
