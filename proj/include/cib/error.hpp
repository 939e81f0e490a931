#pragma once

#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cib {

/// Malformed or inconsistent input data (file format violations, provenance mismatch).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A numerical procedure could not produce a meaningful result
/// (empty calibration, degenerate margin, diverged training).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using WarningHandler = std::function<void(std::string_view)>;

inline WarningHandler& warning_handler() {
    static WarningHandler handler = [](std::string_view msg) {
        std::cerr << "warning: " << msg << '\n';
    };
    return handler;
}

inline void warn(std::string_view msg) {
    if (auto& h = warning_handler()) h(msg);
}

/// Installs a handler for the lifetime of the object and restores the previous one.
class ScopedWarningHandler {
public:
    explicit ScopedWarningHandler(WarningHandler h) : previous_(std::move(warning_handler())) {
        warning_handler() = std::move(h);
    }
    ~ScopedWarningHandler() { warning_handler() = std::move(previous_); }
    ScopedWarningHandler(const ScopedWarningHandler&) = delete;
    ScopedWarningHandler& operator=(const ScopedWarningHandler&) = delete;

private:
    WarningHandler previous_;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace cib
