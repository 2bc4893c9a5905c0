#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pcmf {

// Bad user-supplied data or configuration (CLI exit code 2).
struct input_error : std::runtime_error {
    explicit input_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure during fitting or evaluation (CLI exit code 3).
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require_input(bool ok, const std::string& msg) {
    if (!ok) throw input_error(msg);
}

inline void require_numeric(bool ok, const std::string& msg) {
    if (!ok) throw numeric_error(msg);
}

}  // namespace pcmf
