#ifndef CORRGROUP_DIAGNOSTICS_HPP
#define CORRGROUP_DIAGNOSTICS_HPP

#include <cstdlib>
#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <utility>

/**
 * @file diagnostics.hpp
 * @brief Warning/progress sink shared by all modules.
 *
 * Messages go to standard error by default. The verbosity starts from the
 * `CORRGROUP_VERBOSITY` environment variable (0 = silent, 1 = warnings, 2 = progress).
 */

namespace corrgroup {

enum class Level { warning = 1, info = 2 };

namespace detail {

struct DiagnosticState {
    std::mutex lock;
    int verbosity;
    std::function<void(Level, const std::string&)> sink;

    DiagnosticState() : verbosity(1) {
        if (const char* env = std::getenv("CORRGROUP_VERBOSITY")) {
            verbosity = std::atoi(env);
        }
    }
};

inline DiagnosticState& diagnostic_state() {
    static DiagnosticState state;
    return state;
}

}

inline void set_verbosity(int level) {
    auto& s = detail::diagnostic_state();
    std::lock_guard<std::mutex> guard(s.lock);
    s.verbosity = level;
}

inline int verbosity() {
    auto& s = detail::diagnostic_state();
    std::lock_guard<std::mutex> guard(s.lock);
    return s.verbosity;
}

/**
 * Replace the default stderr sink, e.g. to capture warnings in tests.
 * Passing an empty function restores the default.
 */
inline void set_diagnostic_sink(std::function<void(Level, const std::string&)> sink) {
    auto& s = detail::diagnostic_state();
    std::lock_guard<std::mutex> guard(s.lock);
    s.sink = std::move(sink);
}

inline void emit(Level level, const std::string& message) {
    auto& s = detail::diagnostic_state();
    std::lock_guard<std::mutex> guard(s.lock);
    if (s.sink) {
        s.sink(level, message);
        return;
    }
    if (static_cast<int>(level) > s.verbosity) {
        return;
    }
    std::cerr << (level == Level::warning ? "warning: " : "") << message << '\n';
}

inline void warn(const std::string& message) { emit(Level::warning, message); }

inline void info(const std::string& message) { emit(Level::info, message); }

}

#endif
