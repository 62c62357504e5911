#pragma once

#include <stdexcept>
#include <string>

namespace dsreg {

enum class ErrorKind {
    invalid_input,
    invalid_volume,
    invalid_config,
    no_overlap,
    gauge_underdetermined,
    io,
};

const char* to_string(ErrorKind kind) noexcept;

// Single exception type for the library; callers dispatch on kind().
class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

  private:
    ErrorKind kind_;
};

} // namespace dsreg
