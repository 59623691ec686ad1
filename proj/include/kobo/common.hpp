#pragma once

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace kobo {

// Error taxonomy used across the library. All of them derive from
// std::runtime_error so callers that do not care can catch one type.
struct shape_error : std::runtime_error {
    explicit shape_error(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct parameter_error : std::runtime_error {
    explicit parameter_error(const std::string& msg) : std::runtime_error("parameter error: " + msg) {}
};

struct contract_error : std::runtime_error {
    explicit contract_error(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};

struct parse_error : std::runtime_error {
    explicit parse_error(const std::string& msg) : std::runtime_error("parse error: " + msg) {}
};

struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

}  // namespace kobo
