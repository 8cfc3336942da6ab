#pragma once

#include <functional>
#include <string>

namespace pt {

enum class LogLevel { Info, Warning, Error };

using LogSink = std::function<void(LogLevel, const std::string&)>;

/// Replaces the process-wide sink; an empty function restores stderr output.
void set_log_sink(LogSink sink);
void log_message(LogLevel level, const std::string& message);

} // namespace pt
