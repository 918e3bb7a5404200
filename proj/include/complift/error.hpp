#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace complift {

// Base of everything the library throws on purpose. `exit_code` is what the
// command-line tool returns when the error escapes a command.
class error : public std::runtime_error {
public:
    explicit error(const std::string& what, int exit_code = 1)
        : std::runtime_error(what), exit_code_(exit_code) {}
    int exit_code() const noexcept { return exit_code_; }

private:
    int exit_code_;
};

class config_error : public error {
public:
    explicit config_error(const std::string& what) : error(what, 2) {}
};

class missing_input_error : public error {
public:
    explicit missing_input_error(const std::string& what) : error(what, 3) {}
};

class numerical_error : public error {
public:
    explicit numerical_error(const std::string& what) : error(what, 4) {}
};

class parse_error : public config_error {
public:
    parse_error(const std::string& what, std::size_t offset)
        : config_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

// Cache directory does not match its manifest (size, dtype, missing file).
class cache_error : public error {
public:
    explicit cache_error(const std::string& what) : error(what, 3) {}
};

}  // namespace complift
