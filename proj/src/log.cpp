#include "pianotimbre/log.hpp"

#include <iostream>
#include <mutex>

namespace pt {

namespace {

std::mutex& sink_mutex()
{
    static std::mutex m;
    return m;
}

LogSink& sink()
{
    static LogSink s;
    return s;
}

const char* level_name(LogLevel level)
{
    switch (level) {
    case LogLevel::Info:
        return "info";
    case LogLevel::Warning:
        return "warning";
    case LogLevel::Error:
        return "error";
    }
    return "?";
}

} // namespace

void set_log_sink(LogSink s)
{
    std::lock_guard lock(sink_mutex());
    sink() = std::move(s);
}

void log_message(LogLevel level, const std::string& message)
{
    std::lock_guard lock(sink_mutex());
    if (sink())
        sink()(level, message);
    else
        std::cerr << "[" << level_name(level) << "] " << message << '\n';
}

} // namespace pt
