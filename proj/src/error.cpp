#include "dsreg/error.hpp"

namespace dsreg {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::invalid_input: return "invalid input";
    case ErrorKind::invalid_volume: return "invalid volume";
    case ErrorKind::invalid_config: return "invalid config";
    case ErrorKind::no_overlap: return "no overlap";
    case ErrorKind::gauge_underdetermined: return "gauge underdetermined";
    case ErrorKind::io: return "i/o error";
    }
    return "unknown error";
}

} // namespace dsreg
