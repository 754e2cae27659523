#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <utility>

namespace dragon::log {

using Sink = std::function<void(const std::string&)>;

namespace detail {
inline std::mutex& sink_mutex() {
    static std::mutex m;
    return m;
}
inline Sink& warning_sink() {
    static Sink sink = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
    return sink;
}
}  // namespace detail

inline void warn(const std::string& message) {
    std::lock_guard lock(detail::sink_mutex());
    if (detail::warning_sink()) detail::warning_sink()(message);
}

inline Sink set_warning_sink(Sink sink) {
    std::lock_guard lock(detail::sink_mutex());
    return std::exchange(detail::warning_sink(), std::move(sink));
}

/// Installs a sink for the lifetime of the object and restores the previous one.
class ScopedWarningSink {
public:
    explicit ScopedWarningSink(Sink sink) : previous_(set_warning_sink(std::move(sink))) {}
    ~ScopedWarningSink() { set_warning_sink(std::move(previous_)); }
    ScopedWarningSink(const ScopedWarningSink&) = delete;
    ScopedWarningSink& operator=(const ScopedWarningSink&) = delete;

private:
    Sink previous_;
};

}  // namespace dragon::log
